"""Scenario files and per-repetition seeding.

A scenario is a flat YAML mapping. Times are in trial time units and the
censoring scale is named accordingly. Subgroup variables are 1-based, matching
the ``x1..xp`` column names of generated CSVs. Unknown keys are rejected with
their line number.
"""
from __future__ import annotations

import hashlib
import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .dgp import (CENSORING_SCENARIOS, BetaCensoring, GeneratorConfig, SubgroupDefinition,
                  load_covariate_matrix, prognostic_vector)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioSpec:
    name: str = "scenario"
    p: int = 20
    gamma: tuple | None = None
    subgroup_vars: tuple = (17, 18, 19, 20)
    subgroup_threshold: float = -1.0
    subgroup_direction: str = ">="
    covariates_file: str | None = None
    censoring_scenario: int | None = None
    censoring_a: float | None = None
    censoring_b: float | None = None
    censoring_scale_time: float = 20.0
    baseline_scale: float = 2.0
    n: int = 500
    validation_n: int | None = None
    train_fraction: float = 0.5
    arr_points: int = 10
    repetitions: int = 100
    methods: tuple = ("univariate_interaction", "univariate_ttest", "multivariate_cox",
                      "multivariate_tree", "mob", "itree", "sides", "seqbt", "ardp", "oracle")
    base_seed: int = 0
    alpha: float = 0.05
    calibration_file: str | None = None
    calibration_mc_n: int = 100_000
    calibration_seed: int = 0
    auto_calibrate: bool = True
    output_dir: str = "results"
    base_dir: str = field(default=".", compare=False, repr=False)

    def __post_init__(self):
        from .methods import METHODS

        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if self.arr_points < 1:
            raise ConfigError("arr_points must be at least 1")
        if not self.methods:
            raise ConfigError("methods must be nonempty")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown method id(s): {', '.join(unknown)}")
        if self.censoring_scenario is not None and self.censoring_scenario not in CENSORING_SCENARIOS:
            raise ConfigError("censoring_scenario must be one of 0, 1, 2, 3")
        if (self.censoring_a is None) != (self.censoring_b is None):
            raise ConfigError("censoring_a and censoring_b go together")
        if self.censoring_a is not None and self.censoring_scenario is not None:
            raise ConfigError("give censoring_scenario or censoring_a/censoring_b, not both")
        if self.gamma is not None and len(self.gamma) != self.p:
            raise ConfigError(f"gamma has {len(self.gamma)} entries, p is {self.p}")
        if any(not 1 <= v <= self.p for v in self.subgroup_vars):
            raise ConfigError("subgroup_vars are 1-based and must lie in 1..p")

    @property
    def validation_size(self) -> int:
        return self.n if self.validation_n is None else self.validation_n

    @property
    def predictive_set(self) -> list[int]:
        return [v - 1 for v in self.subgroup_vars]

    def _path(self, name):
        path = Path(name)
        return path if path.is_absolute() else Path(self.base_dir) / path

    def generator_config(self) -> GeneratorConfig:
        try:
            gamma = prognostic_vector(self.p, self.gamma)
            sub = SubgroupDefinition.thresholds(self.predictive_set, self.subgroup_threshold,
                                                self.subgroup_direction)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.censoring_a is not None:
            cens = BetaCensoring(self.censoring_a, self.censoring_b, self.censoring_scale_time)
        elif self.censoring_scenario:
            base = CENSORING_SCENARIOS[self.censoring_scenario]
            cens = BetaCensoring(base.a, base.b, self.censoring_scale_time)
        else:
            cens = None
        cov = None
        if self.covariates_file is not None:
            cov = load_covariate_matrix(self._path(self.covariates_file))
        try:
            return GeneratorConfig(gamma, sub, cov, cens, self.n, self.baseline_scale)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


_FIELDS = {f for f in ScenarioSpec.__dataclass_fields__ if f != "base_dir"}
_TUPLES = {"gamma", "subgroup_vars", "methods"}


def load_scenario(path) -> ScenarioSpec:
    """Parse a flat YAML scenario; errors name the offending line."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if root is None:
        return ScenarioSpec(base_dir=str(path.parent))
    if not isinstance(root, yaml.MappingNode):
        raise ConfigError(f"{path}:{root.start_mark.line + 1}: top level must be a key/value mapping")
    kw = {}
    for knode, vnode in root.value:
        line = knode.start_mark.line + 1
        key = knode.value
        if key not in _FIELDS:
            raise ConfigError(f"{path}:{line}: unknown key {key!r}")
        if key in kw:
            raise ConfigError(f"{path}:{line}: duplicate key {key!r}")
        if isinstance(vnode, yaml.MappingNode):
            raise ConfigError(f"{path}:{line}: nested mappings are not allowed ({key!r})")
        value = yaml.safe_load(yaml.serialize(vnode))
        if key in _TUPLES and value is not None:
            if not isinstance(value, list):
                raise ConfigError(f"{path}:{line}: {key!r} must be a list")
            value = tuple(value)
        kw[key] = value
    try:
        return ScenarioSpec(**kw, base_dir=str(path.parent))
    except (ConfigError, TypeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


# --- seeding ---------------------------------------------------------------

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def repetition_seed(base_seed: int, arr_index: int, rep: int) -> int:
    """seed = mix(mix(mix(base) ^ arr_index) ^ rep)."""
    s = splitmix64(int(base_seed) & _MASK)
    s = splitmix64(s ^ int(arr_index))
    return splitmix64(s ^ int(rep))


def stream(seed: int, label: str) -> np.random.SeedSequence:
    """Independent named sub-stream of a repetition seed."""
    return np.random.SeedSequence([seed, zlib.crc32(label.encode())])
