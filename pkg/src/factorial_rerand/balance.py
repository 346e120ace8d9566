"""Covariate balance diagnostics for factorial allocations.

For each factorial effect, the units split into a +1 group and a -1 group of
equal size.  Balance for that effect is the vector of covariate mean
differences between the groups, summarized by a squared Mahalanobis distance
in the metric of the (allocation-independent) covariate covariance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.linalg import solve_triangular

from .assignment import AssignmentMatrix
from .errors import DimensionMismatch, SingularCovariance

# Above this condition number the covariance is treated as numerically
# singular: Mahalanobis distances would be dominated by roundoff.
CONDITION_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class CovariateMatrix:
    """n x p matrix of unit covariates with named columns."""

    entries: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.entries, dtype=np.float64)
        if arr.ndim != 2:
            raise DimensionMismatch(f"covariates must be a 2-d array, got shape {arr.shape}")
        names = tuple(str(s) for s in self.names)
        if arr.shape[1] != len(names):
            raise DimensionMismatch(
                f"{len(names)} column names for {arr.shape[1]} covariate columns"
            )
        if len(set(names)) != len(names):
            raise ValueError("covariate names must be unique")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("covariate matrix must be nonempty")
        bad = ~np.isfinite(arr)
        if bad.any():
            col = names[int(np.argwhere(bad)[0][1])]
            raise ValueError(f"covariate {col!r} contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def p(self) -> int:
        return self.entries.shape[1]

    def column(self, name: str) -> np.ndarray:
        try:
            return self.entries[:, self.names.index(name)]
        except ValueError:
            raise ValueError(f"unknown covariate {name!r}") from None

    def subset(self, names: Iterable[str]) -> "CovariateMatrix":
        names = tuple(names)
        idx = []
        for name in names:
            if name not in self.names:
                raise ValueError(f"unknown covariate {name!r}")
            idx.append(self.names.index(name))
        return CovariateMatrix(entries=self.entries[:, idx], names=names)


@dataclass(frozen=True, eq=False)
class CovarianceModel:
    """Fixed covariance metric for balance scoring, shared by every allocation.

    Holds the column means, the sample covariance (divisor n-1), and its
    lower Cholesky factor.  Distances are computed through triangular solves
    against the factor; the covariance is never inverted explicitly.
    """

    names: tuple[str, ...]
    means: np.ndarray
    matrix: np.ndarray
    cholesky: np.ndarray
    condition: float

    @property
    def p(self) -> int:
        return self.matrix.shape[0]


def fit_covariance(x: CovariateMatrix) -> CovarianceModel:
    """Estimate the covariate covariance once, up front.

    Raises SingularCovariance when a column has zero variance, when the
    condition number exceeds CONDITION_LIMIT, or when the Cholesky
    factorization fails outright.
    """
    n, p = x.n, x.p
    if n < p + 1:
        raise ValueError(f"need at least p+1={p + 1} units to estimate a {p}-column covariance, got {n}")
    spans = np.ptp(x.entries, axis=0)
    if np.any(spans == 0.0):
        col = x.names[int(np.argmax(spans == 0.0))]
        raise SingularCovariance(f"covariate {col!r} has zero variance")
    means = x.entries.mean(axis=0)
    centered = x.entries - means
    cov = centered.T @ centered / (n - 1)
    condition = float(np.linalg.cond(cov))
    if not np.isfinite(condition) or condition > CONDITION_LIMIT:
        raise SingularCovariance(
            f"covariance condition number {condition:.3g} exceeds {CONDITION_LIMIT:.0e}; "
            "drop or combine collinear covariates"
        )
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariance(f"covariance factorization failed: {exc}") from exc
    for arr in (means, cov, chol):
        arr.setflags(write=False)
    return CovarianceModel(
        names=x.names, means=means, matrix=cov, cholesky=chol, condition=condition
    )


def mean_difference(x: CovariateMatrix, w: AssignmentMatrix, effect: str | int) -> np.ndarray:
    """Covariate mean difference between the +1 and -1 groups of one effect.

    Equals (2/n) X^T w_f because each group has exactly n/2 units.  The mean
    column is rejected: it has no group split.
    """
    label = _effect_label(w, effect)
    if x.n != w.n:
        raise DimensionMismatch(f"covariates have {x.n} rows but assignment has {w.n}")
    col = w.column(label)
    return (2.0 / x.n) * (x.entries.T @ col)


def mahalanobis(cm: CovarianceModel, d: np.ndarray, n: int) -> float:
    """Squared Mahalanobis length (n/4) d' cov^{-1} d of a mean-difference vector."""
    d = np.asarray(d, dtype=np.float64)
    if d.shape != (cm.p,):
        raise DimensionMismatch(f"mean difference has shape {d.shape}, expected ({cm.p},)")
    if n < 2:
        raise ValueError("need at least two units")
    z = solve_triangular(cm.cholesky, d, lower=True, check_finite=False)
    return float((n / 4.0) * (z @ z))


@dataclass(frozen=True, eq=False)
class BalanceProfile:
    """Per-effect balance summary of one allocation: d vectors and M distances."""

    covariate_names: tuple[str, ...]
    effects: tuple[str, ...]
    mean_diffs: dict[str, np.ndarray]
    distances: dict[str, float]

    def d(self, effect: str) -> np.ndarray:
        try:
            return self.mean_diffs[effect]
        except KeyError:
            raise ValueError(f"balance profile does not cover effect {effect!r}") from None

    def m(self, effect: str) -> float:
        try:
            return self.distances[effect]
        except KeyError:
            raise ValueError(f"balance profile does not cover effect {effect!r}") from None

    @property
    def max_m(self) -> float:
        return max(self.distances.values())

    def rows(self) -> list[tuple[str, str, str, float]]:
        """Flat (effect, covariate, statistic, value) rows for reports."""
        out: list[tuple[str, str, str, float]] = []
        for eff in self.effects:
            d = self.mean_diffs[eff]
            for name, value in zip(self.covariate_names, d):
                out.append((eff, name, "mean_difference", float(value)))
            out.append((eff, "", "mahalanobis", self.distances[eff]))
        return out


def balance_profile(
    x: CovariateMatrix,
    w: AssignmentMatrix,
    effects: Iterable[str | int],
    cm: CovarianceModel | None = None,
) -> BalanceProfile:
    """Score one allocation on a set of effects.

    The covariance model is fitted from x when not supplied; passing a
    prefitted model keeps repeated scoring consistent and cheap.
    """
    labels = [_effect_label(w, e) for e in effects]
    if not labels:
        raise ValueError("at least one effect is required")
    seen: dict[str, None] = {}
    for lab in labels:
        seen.setdefault(lab, None)
    labels = list(seen)
    if cm is None:
        cm = fit_covariance(x)
    elif cm.names != x.names:
        raise DimensionMismatch("covariance model columns do not match the covariate matrix")
    if x.n != w.n:
        raise DimensionMismatch(f"covariates have {x.n} rows but assignment has {w.n}")
    diffs: dict[str, np.ndarray] = {}
    dists: dict[str, float] = {}
    for lab in labels:
        d = mean_difference(x, w, lab)
        d.setflags(write=False)
        diffs[lab] = d
        dists[lab] = mahalanobis(cm, d, x.n)
    return BalanceProfile(
        covariate_names=x.names,
        effects=tuple(labels),
        mean_diffs=diffs,
        distances=dists,
    )


def _effect_label(w: AssignmentMatrix, effect: str | int) -> str:
    if isinstance(effect, str):
        if effect == w.labels[0]:
            raise ValueError("the mean column has no balance split")
        w.column_index(effect)  # validates
        return effect
    if not 1 <= effect < len(w.labels):
        raise ValueError(
            f"effect index must be in [1, {len(w.labels) - 1}], got {effect}"
        )
    return w.labels[effect]
