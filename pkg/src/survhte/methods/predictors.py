"""Good-responder classification rules produced by the methods.

Every predictor maps a covariate matrix to 0/1 labels, 1 meaning good
responder, and renders itself as a one-line rule string for the result CSVs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SubgroupPredictor:
    def predict(self, x) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> str:
        raise NotImplementedError

    def __call__(self, x):
        return self.predict(x)


_OPS = {"<=": np.less_equal, ">=": np.greater_equal, "<": np.less, ">": np.greater}


def _clause_str(i, c, d):
    return f"x{i + 1} {d} {c:.6g}"


@dataclass(frozen=True)
class ThresholdRule(SubgroupPredictor):
    """Ordered conjunction of (index, threshold, direction) clauses.

    ``inside`` is the label given to rows satisfying every clause; the
    complement gets ``1 - inside``. Indices may repeat (box rules).
    """
    clauses: tuple
    inside: int = 1

    def members(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.ones(x.shape[0], dtype=bool)
        for i, c, d in self.clauses:
            out &= _OPS[d](x[:, i], c)
        return out

    def predict(self, x) -> np.ndarray:
        m = self.members(x)
        return np.where(m, self.inside, 1 - self.inside).astype(int)

    def variables(self) -> list[int]:
        seen = []
        for i, _, _ in self.clauses:
            if i not in seen:
                seen.append(i)
        return seen

    def describe(self) -> str:
        body = " & ".join(_clause_str(*c) for c in self.clauses) or "TRUE"
        return f"rule[{body}] -> {self.inside}"


@dataclass(frozen=True)
class TreePath(SubgroupPredictor):
    """Rows routed to ``leaf_id`` of a fitted tree are good responders."""
    tree: object
    leaf_id: int

    def predict(self, x) -> np.ndarray:
        return (self.tree.apply(x) == self.leaf_id).astype(int)

    def describe(self) -> str:
        path = self.tree.path_to(self.leaf_id)
        body = " & ".join(_clause_str(*c) for c in path) or "TRUE"
        return f"leaf[{body}]"


@dataclass(frozen=True)
class ArrSign(SubgroupPredictor):
    """Label 1 where the fitted model's counterfactual ARR at ``t`` is >= cut."""
    model: object
    t: float = 1.0
    cut: float = 0.0

    def predict(self, x) -> np.ndarray:
        return (self.model.arr(x, self.t) >= self.cut).astype(int)

    def describe(self) -> str:
        return f"arr_sign[{type(self.model).__name__}, t={self.t:g}, ARR >= {self.cut:g}]"


@dataclass(frozen=True)
class GeneratingRule(SubgroupPredictor):
    """The simulator's own subgroup function."""
    definition: object

    def predict(self, x) -> np.ndarray:
        return np.asarray(self.definition(np.atleast_2d(x)), dtype=int)

    def describe(self) -> str:
        return f"truth[{self.definition.describe()}]"
