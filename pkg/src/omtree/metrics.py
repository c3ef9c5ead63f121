"""Relative-error accuracy measures and the Wilcoxon rank-sum test."""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np


@dataclass(frozen=True)
class PredictionSet:
    """Paired (actual, predicted) efforts; actuals must be strictly positive."""

    actual: np.ndarray
    predicted: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "actual", np.asarray(self.actual, dtype=float))
        object.__setattr__(self, "predicted", np.asarray(self.predicted, dtype=float))
        if self.actual.shape != self.predicted.shape:
            raise ValueError("actual and predicted lengths differ")
        if np.any(self.actual <= 0):
            raise ValueError("actual efforts must be positive")

    @classmethod
    def from_pairs(cls, pairs) -> "PredictionSet":
        pairs = list(pairs)
        return cls(np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))

    def __len__(self) -> int:
        return len(self.actual)


def mre(actual: float, predicted: float) -> float:
    """Magnitude of relative error |actual - predicted| / actual."""
    if actual <= 0:
        raise ValueError(f"actual must be positive, got {actual}")
    return abs(actual - predicted) / actual


def _mres(p: PredictionSet) -> np.ndarray:
    if len(p) == 0:
        raise ValueError("empty prediction set")
    return np.abs(p.actual - p.predicted) / p.actual


def mmre(p: PredictionSet) -> float:
    """Mean MRE as a percentage."""
    return 100.0 * float(_mres(p).mean())


def mdmre(p: PredictionSet) -> float:
    """Median MRE as a percentage (even counts average the central pair)."""
    return 100.0 * float(np.median(_mres(p)))


def pred(p: PredictionSet, level: float = 0.25) -> float:
    """Percentage of pairs with MRE strictly below ``level``."""
    m = _mres(p)
    return 100.0 * float(np.count_nonzero(m < level)) / len(m)


def abs_residuals(p: PredictionSet) -> np.ndarray:
    """|actual - predicted| per pair, order preserving."""
    return np.abs(p.actual - p.predicted)


@dataclass(frozen=True)
class SignificanceResult:
    statistic: float
    p_value: float
    alpha: float
    significant: bool
    method: str


def wilcoxon_rank_sum(a, b, alpha: float = 0.05, method: str = "auto") -> SignificanceResult:
    """Two-sided Wilcoxon rank-sum test on two independent samples.

    The statistic is the rank sum of ``a`` under mid-ranks.  Small
    tie-free problems (total size <= 10) are solved by exact enumeration
    of all rank assignments; otherwise a normal approximation with
    continuity correction and tie-corrected variance is used.  ``method``
    may force either branch ("exact" / "normal").
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    na, nb = len(a), len(b)
    if na < 3 or nb < 3:
        raise ValueError(f"samples too small for rank-sum test: {na}, {nb}")

    pooled = np.concatenate([a, b])
    ranks = _midranks(pooled)
    w = float(ranks[:na].sum())
    has_ties = len(np.unique(pooled)) < na + nb

    if method == "auto":
        method = "exact" if (na + nb <= 10 and not has_ties) else "normal"
    if method == "exact":
        if has_ties:
            raise ValueError("exact branch requires tie-free samples")
        p = _exact_two_sided_p(ranks, na, w)
    elif method == "normal":
        p = _normal_two_sided_p(pooled, ranks, na, nb, w)
    else:
        raise ValueError(f"unknown method {method!r}")
    return SignificanceResult(w, p, alpha, p < alpha, method)


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_two_sided_p(ranks: np.ndarray, na: int, w: float) -> float:
    n = len(ranks)
    total = math.comb(n, na)
    le = ge = 0
    for combo in combinations(range(n), na):
        s = ranks[list(combo)].sum()
        if s <= w + 1e-9:
            le += 1
        if s >= w - 1e-9:
            ge += 1
    return min(1.0, 2.0 * min(le, ge) / total)


def _normal_two_sided_p(pooled, ranks, na: int, nb: int, w: float) -> float:
    n = na + nb
    mu = na * (n + 1) / 2.0
    _, counts = np.unique(pooled, return_counts=True)
    tie_term = float(((counts**3) - counts).sum()) / (n * (n - 1))
    var = na * nb / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return 1.0
    z = max(0.0, abs(w - mu) - 0.5) / math.sqrt(var)
    return math.erfc(z / math.sqrt(2.0))
