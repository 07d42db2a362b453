"""Synthetic and semi-synthetic randomized trials with calibrated heterogeneity.

Event times follow a proportional-hazards model with Weibull baseline
h0(t) = k t. The primitives below are written for k = 1 (cumulative baseline
t^2 / 2); a generator with k != 1 shifts the linear predictor by log k. The
treatment log hazard ratio is beta0 in subgroup G = 0 and beta1 in subgroup
G = 1. The map from beta to the subgroup absolute risk reduction at t = 1 has
no closed form once averaged over covariates; it is tabulated by Monte-Carlo
and inverted.
"""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import isotonic_regression

from .survival import TrialData

HORIZON = 1.0
CHUNK = 20_000


@dataclass(frozen=True)
class SubgroupDefinition:
    """Conjunction of threshold clauses; indices are 0-based."""
    clauses: tuple

    def __post_init__(self):
        clauses = tuple((int(i), float(c), str(d)) for i, c, d in self.clauses)
        if not clauses:
            raise ValueError("subgroup definition needs at least one clause")
        idx = [c[0] for c in clauses]
        if len(set(idx)) != len(idx):
            raise ValueError("subgroup clause indices must be distinct")
        for _, _, d in clauses:
            if d not in (">=", "<="):
                raise ValueError(f"unknown clause direction {d!r}")
        object.__setattr__(self, "clauses", clauses)

    @classmethod
    def thresholds(cls, indices, threshold=-1.0, direction=">="):
        return cls(tuple((i, threshold, direction) for i in indices))

    @property
    def indices(self) -> list[int]:
        return [c[0] for c in self.clauses]

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.ones(x.shape[:-1], dtype=bool)
        for i, c, d in self.clauses:
            out &= (x[..., i] >= c) if d == ">=" else (x[..., i] <= c)
        return out.astype(int)

    def describe(self) -> str:
        return " & ".join(f"x{i + 1} {d} {c:g}" for i, c, d in self.clauses)


def subgroup_assign(x, definition: SubgroupDefinition):
    return definition(x)


@dataclass(frozen=True)
class GaussianCovariates:
    p: int

    def sample(self, n, rng) -> np.ndarray:
        return rng.standard_normal((n, self.p))


@dataclass(frozen=True, eq=False)
class EmpiricalCovariates:
    """Rows of a user-supplied matrix drawn uniformly with replacement."""
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or not np.all(np.isfinite(m)):
            raise ValueError("empirical matrix must be 2-D with no missing values")
        object.__setattr__(self, "matrix", m)

    @property
    def p(self) -> int:
        return self.matrix.shape[1]

    def sample(self, n, rng) -> np.ndarray:
        return self.matrix[rng.integers(0, self.matrix.shape[0], size=n)]


@dataclass(frozen=True)
class BetaCensoring:
    a: float
    b: float
    scale: float = 20.0

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("beta censoring shapes must be positive")

    def sample(self, n, rng) -> np.ndarray:
        c = self.scale * rng.beta(self.a, self.b, size=n)
        bad = c <= 0
        while bad.any():
            c[bad] = self.scale * rng.beta(self.a, self.b, size=int(bad.sum()))
            bad = c <= 0
        return c


CENSORING_SCENARIOS = {
    0: None,
    1: BetaCensoring(0.4, 0.4),
    2: BetaCensoring(0.3, 1.0),
    3: BetaCensoring(0.2, 2.0),
}


@dataclass(frozen=True, eq=False)
class GeneratorConfig:
    gamma: np.ndarray
    subgroup: SubgroupDefinition
    covariates: GaussianCovariates | EmpiricalCovariates | None = None
    censoring: BetaCensoring | None = None
    n: int = 500
    # h0(t) = baseline_scale * t; 2.0 reproduces the reference event rates and ARR range
    baseline_scale: float = 2.0

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=float)
        object.__setattr__(self, "gamma", gamma)
        if self.covariates is None:
            object.__setattr__(self, "covariates", GaussianCovariates(len(gamma)))
        if self.covariates.p != len(gamma):
            raise ValueError(
                f"covariate source has {self.covariates.p} columns, gamma has {len(gamma)}")
        if max(self.subgroup.indices) >= len(gamma):
            raise ValueError("subgroup index out of range")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.baseline_scale <= 0:
            raise ValueError("baseline_scale must be positive")

    @property
    def p(self) -> int:
        return len(self.gamma)

    @property
    def log_baseline(self) -> float:
        return float(np.log(self.baseline_scale))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.gamma.tobytes())
        h.update(repr(self.subgroup.clauses).encode())
        h.update(repr(float(self.baseline_scale)).encode())
        if isinstance(self.covariates, EmpiricalCovariates):
            h.update(self.covariates.matrix.tobytes())
        else:
            h.update(b"gaussian")
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class HeterogeneityPoint:
    arr1_target: float
    arr0_target: float
    beta1: float
    beta0: float


def linear_predictor(x, w, g, beta0, beta1, gamma):
    return beta0 * w + (beta1 - beta0) * g * w + np.asarray(x, dtype=float) @ np.asarray(gamma)


def survival_at(t, lp):
    return np.exp(-np.exp(lp) * np.square(t) / 2.0)


def sample_event_time(lp, rng):
    """Inverse-transform draw from S(t) = exp(-exp(lp) t^2 / 2)."""
    lp = np.asarray(lp, dtype=float)
    u = rng.random(lp.shape)
    zero = u == 0.0
    while zero.any():
        u[zero] = rng.random(int(zero.sum()))
        zero = u == 0.0
    t = np.sqrt(-2.0 * np.log(u) * np.exp(-lp))
    return t if t.ndim else float(t)


def individual_arr(x, beta0, beta1, gamma, subgroup: SubgroupDefinition, baseline_scale=1.0):
    x = np.asarray(x, dtype=float)
    prog = x @ np.asarray(gamma) + np.log(baseline_scale)
    beta_g = np.where(subgroup(x) == 1, beta1, beta0)
    return survival_at(HORIZON, beta_g + prog) - survival_at(HORIZON, prog)


_GAMMA_BLOCKS = {
    20: [(1, 5, 1.0), (6, 10, -1.0)],
    100: [(1, 5, 1.0), (6, 10, -1.0), (11, 15, 0.1), (26, 30, 0.1), (16, 25, -0.1),
          (31, 35, 0.01), (46, 50, 0.01), (56, 60, 0.01), (36, 45, -0.01), (51, 55, -0.01)],
    1000: [(1, 10, 1.0), (11, 20, -1.0), (21, 70, 0.1), (71, 120, -0.1),
           (121, 320, 0.01), (321, 520, -0.01)],
}


def prognostic_vector(p, user_vector=None) -> np.ndarray:
    """Sparse prognostic effects for the supported dimensions (1-based blocks)."""
    if user_vector is not None:
        v = np.asarray(user_vector, dtype=float)
        if len(v) != p:
            raise ValueError(f"user prognostic vector has length {len(v)}, expected {p}")
        return v
    if p not in _GAMMA_BLOCKS:
        raise ValueError(f"no built-in prognostic vector for p={p}; supply gamma")
    gamma = np.zeros(p)
    for lo, hi, val in _GAMMA_BLOCKS[p]:
        gamma[lo - 1:hi] = val
    return gamma


@dataclass(frozen=True, eq=False)
class CalibrationCurve:
    beta_grid: np.ndarray
    arr0: np.ndarray
    arr1: np.ndarray
    prevalence: float
    mc_size: int
    seed: int
    config_hash: str = ""
    _iso: dict = field(default_factory=dict, repr=False, compare=False)

    def smoothed(self, which: int) -> np.ndarray:
        """Nonincreasing isotonic fit of the raw Monte-Carlo estimates."""
        if which not in self._iso:
            raw = self.arr0 if which == 0 else self.arr1
            self._iso[which] = isotonic_regression(raw, increasing=False).x
        return self._iso[which]

    def achievable(self, which: int) -> tuple[float, float]:
        y = self.smoothed(which)
        return float(y.min()), float(y.max())

    def isotonic_violation(self, which: int) -> float:
        raw = self.arr0 if which == 0 else self.arr1
        return float(np.max(np.abs(raw - self.smoothed(which))))

    @property
    def tolerance(self) -> float:
        return 3.0 / np.sqrt(self.mc_size)


def _chunk_rng(seed, chunk):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(chunk)]))


def calibrate(config: GeneratorConfig, beta_grid=None, mc_size=100_000, seed=0) -> CalibrationCurve:
    """Monte-Carlo tabulation of subgroup ARR(t=1) as a function of beta.

    The same covariate draws are reused at every grid point, and draws come
    in fixed-size chunks with their own substreams so the result does not
    depend on how the loop is scheduled.
    """
    if beta_grid is None:
        beta_grid = np.linspace(-10.0, 10.0, 201)
    beta_grid = np.asarray(beta_grid, dtype=float)
    if np.any(np.diff(beta_grid) <= 0):
        raise ValueError("beta grid must be strictly increasing")
    if mc_size < 1000:
        raise ValueError("mc_size must be at least 1000")
    sums = np.zeros((2, len(beta_grid)))
    counts = np.zeros(2)
    n_chunks = -(-mc_size // CHUNK)
    for k in range(n_chunks):
        m = min(CHUNK, mc_size - k * CHUNK)
        x = config.covariates.sample(m, _chunk_rng(seed, k))
        prog = x @ config.gamma + config.log_baseline
        g = config.subgroup(x)
        base = survival_at(HORIZON, prog)
        for grp in (0, 1):
            sel = prog[g == grp]
            counts[grp] += len(sel)
            if len(sel):
                arr = survival_at(HORIZON, beta_grid[:, None] + sel[None, :]) - base[g == grp][None, :]
                sums[grp] += arr.sum(axis=1)
    if counts.min() == 0:
        raise ValueError("degenerate subgroup definition: a subgroup is empty")
    return CalibrationCurve(beta_grid, sums[0] / counts[0], sums[1] / counts[1],
                            float(counts[1] / mc_size), int(mc_size), int(seed),
                            config.fingerprint())


def invert_arr(curve: CalibrationCurve, target_arr: float, which: int) -> float:
    """beta reaching ``target_arr`` in subgroup ``which`` (linear interpolation)."""
    y = curve.smoothed(which)
    beta = curve.beta_grid
    lo, hi = float(y.min()), float(y.max())
    if not lo <= target_arr <= hi:
        raise ValueError(f"target ARR {target_arr:.6f} outside achievable range [{lo:.6f}, {hi:.6f}]")
    # y is nonincreasing in beta: first grid point at or below the target
    i = int(np.argmax(y <= target_arr))
    if y[i] == target_arr or i == 0:
        return float(beta[i])
    y0, y1 = y[i - 1], y[i]
    return float(beta[i - 1] + (target_arr - y0) / (y1 - y0) * (beta[i] - beta[i - 1]))


def solve_null_constraint(arr1_target: float, prevalence: float) -> float:
    if not 0.0 < prevalence < 1.0:
        raise ValueError("prevalence must lie in (0, 1)")
    return -arr1_target * prevalence / (1.0 - prevalence)


def max_arr1(curve: CalibrationCurve) -> float:
    """Largest subgroup-1 ARR whose balancing subgroup-0 ARR is achievable."""
    pi = curve.prevalence
    lo0, _ = curve.achievable(0)
    _, hi1 = curve.achievable(1)
    return float(max(0.0, min(hi1, -lo0 * (1.0 - pi) / pi)))


def heterogeneity_point(curve: CalibrationCurve, arr1: float) -> HeterogeneityPoint:
    arr0 = solve_null_constraint(arr1, curve.prevalence)
    lo0, hi0 = curve.achievable(0)
    # rounding at the top of the grid can leave arr0 a hair outside
    arr0 = float(np.clip(arr0, lo0, hi0)) if lo0 - 1e-12 <= arr0 <= hi0 + 1e-12 else arr0
    return HeterogeneityPoint(float(arr1), arr0, invert_arr(curve, arr1, 1), invert_arr(curve, arr0, 0))


def arr_grid(curve: CalibrationCurve, n_points=10) -> list[HeterogeneityPoint]:
    targets = np.linspace(0.0, max_arr1(curve), n_points)
    return [heterogeneity_point(curve, a) for a in targets]


def generate_trial(config: GeneratorConfig, point: HeterogeneityPoint, seed, n=None) -> TrialData:
    n = config.n if n is None else n
    rng = np.random.default_rng(seed)
    x = config.covariates.sample(n, rng)
    w = rng.integers(0, 2, size=n)
    g = config.subgroup(x)
    lp = linear_predictor(x, w, g, point.beta0, point.beta1, config.gamma) + config.log_baseline
    t = sample_event_time(lp, rng)
    if config.censoring is None:
        u, e = t, np.ones(n, dtype=int)
    else:
        c = config.censoring.sample(n, rng)
        u = np.minimum(t, c)
        e = (t <= u).astype(int)
    return TrialData(x, w, u, e, g)


# --- file formats ---------------------------------------------------------

def save_calibration(curve: CalibrationCurve, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["beta", "arr0", "arr1"])
        for row in zip(curve.beta_grid, curve.arr0, curve.arr1):
            wr.writerow([repr(float(v)) for v in row])
    meta = {"config_hash": curve.config_hash, "mc_size": curve.mc_size,
            "seed": curve.seed, "prevalence": curve.prevalence}
    calibration_meta_path(path).write_text(json.dumps(meta, indent=2) + "\n")


def calibration_meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def load_calibration(path) -> CalibrationCurve:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    meta = json.loads(calibration_meta_path(path).read_text())
    return CalibrationCurve(data[:, 0], data[:, 1], data[:, 2], float(meta["prevalence"]),
                            int(meta["mc_size"]), int(meta["seed"]), meta.get("config_hash", ""))


def save_trial(data: TrialData, path) -> None:
    p = data.p
    header = [f"x{j + 1}" for j in range(p)] + ["w", "time", "event", "true_g"]
    g = data.true_subgroup if data.true_subgroup is not None else np.full(data.n, -1)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for i in range(data.n):
            wr.writerow([repr(float(v)) for v in data.covariates[i]]
                        + [int(data.treatment[i]), repr(float(data.time[i])),
                           int(data.event[i]), int(g[i])])


def load_trial(path) -> TrialData:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    p = len(header) - 4
    g = arr[:, p + 3].astype(int)
    return TrialData(arr[:, :p], arr[:, p].astype(int), arr[:, p + 1], arr[:, p + 2].astype(int),
                     None if np.all(g < 0) else g)


def load_covariate_matrix(path) -> EmpiricalCovariates:
    with open(path) as fh:
        first = fh.readline().strip().split(",")
    try:
        [float(v) for v in first]
        skip = 0
    except ValueError:
        skip = 1
    m = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    return EmpiricalCovariates(m)


def config_to_dict(config: GeneratorConfig) -> dict:
    d = {"p": config.p, "subgroup": [list(c) for c in config.subgroup.clauses], "n": config.n,
         "baseline_scale": config.baseline_scale}
    d["censoring"] = None if config.censoring is None else asdict(config.censoring)
    return d
