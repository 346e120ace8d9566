"""Rerandomization, effect estimation, and randomization inference.

The rerandomizer is a rejection sampler: draw whole balanced allocations,
score every monitored effect, keep the first draw that clears all
thresholds.  No partial repair of rejected draws, so accepted allocations
follow the uniform distribution conditioned on acceptance.  Inference reuses
the same accepted-allocation distribution as its reference set.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import sampling
from .assignment import Allocation, AssignmentMatrix, expand_assignment
from .balance import (
    BalanceProfile,
    CovariateMatrix,
    balance_profile,
    fit_covariance,
)
from .criteria import (
    AcceptanceRule,
    ThresholdMode,
    accept,
    implied_acceptance_probability,
    resolve_thresholds,
)
from .design import DesignSpec, ModelMatrix, build_design_matrix, expand_model_matrix
from .errors import DimensionMismatch, MaxDrawsExceeded

logger = logging.getLogger(__name__)

DEFAULT_MAX_DRAWS = 1_000_000


@dataclass(frozen=True, eq=False)
class RerandomizationResult:
    """An accepted allocation plus everything needed to audit the run."""

    allocation: Allocation
    assignment: AssignmentMatrix
    profile: BalanceProfile
    rule: AcceptanceRule
    thresholds: dict[str, float]
    draws_attempted: int
    acceptance_probability: float
    elapsed_seconds: float
    seed: int
    workers: int

    def manifest(self, version: str | None = None) -> dict:
        """Machine-readable summary for the run manifest file."""
        tiers = []
        for tier in self.rule.tiers:
            a = self.thresholds[tier.effects[0]]
            tiers.append(
                {
                    "name": tier.name,
                    "effects": list(tier.effects),
                    "joint_prob": tier.joint_prob,
                    "a": a,
                }
            )
        return {
            "design": {
                "k": self.allocation.spec.k,
                "r": self.allocation.spec.r,
                "n": self.allocation.spec.n,
                "order": self.allocation.spec.order.value,
                "factor_names": list(self.allocation.spec.factor_names),
            },
            "rule": {"mode": self.rule.mode.value, "p": self.rule.p, "tiers": tiers},
            "seed": self.seed,
            "workers": self.workers,
            "draws_attempted": self.draws_attempted,
            "implied_acceptance_probability": self.acceptance_probability,
            "distances": {e: self.profile.m(e) for e in self.rule.monitored_effects},
            "elapsed_seconds": self.elapsed_seconds,
            "version": version,
        }


def _prepare(
    x: CovariateMatrix,
    spec: DesignSpec,
    rule: AcceptanceRule,
    mm: ModelMatrix | None,
) -> tuple[ModelMatrix, sampling.BalanceKernel, dict[str, float]]:
    if x.n != spec.n:
        raise DimensionMismatch(
            f"covariates have {x.n} rows but the design allocates {spec.n} units"
        )
    if rule.p != x.p:
        raise DimensionMismatch(
            f"acceptance rule expects {rule.p} covariates, covariate matrix has {x.p}"
        )
    if mm is None:
        mm = expand_model_matrix(build_design_matrix(spec))
    for effect in rule.monitored_effects:
        mm.column_index(effect)  # unknown effect fails fast
    cm = fit_covariance(x)
    thresholds = resolve_thresholds(rule)
    kernel = sampling.BalanceKernel(x, spec, mm, cm, thresholds)
    return mm, kernel, thresholds


def rerandomize(
    x: CovariateMatrix,
    spec: DesignSpec,
    rule: AcceptanceRule,
    seed: int,
    max_draws: int = DEFAULT_MAX_DRAWS,
    workers: int = 1,
    mm: ModelMatrix | None = None,
) -> RerandomizationResult:
    """Draw balanced allocations until one passes the acceptance rule.

    Deterministic given the seed: candidate batches are keyed by global index,
    and the earliest accepted index wins, so worker count affects wall time
    only.  Raises MaxDrawsExceeded when the budget runs out.
    """
    if max_draws < 1:
        raise ValueError(f"max_draws must be positive, got {max_draws}")
    if workers < 1:
        raise ValueError(f"workers must be positive, got {workers}")
    t0 = time.perf_counter()
    mm, kernel, thresholds = _prepare(x, spec, rule, mm)
    prob = implied_acceptance_probability(rule)
    if rule.mode is ThresholdMode.CHI_SQUARED:
        logger.info("implied acceptance probability %.6g", prob)
        if prob > 0 and 1.0 / prob > max_draws / 10.0:
            logger.warning(
                "expected draws (~%.0f) exceed a tenth of the budget (%d); "
                "the run may exhaust max_draws",
                1.0 / prob,
                max_draws,
            )

    batch = sampling.ENGINE_BATCH
    n_batches = -(-max_draws // batch)

    def scan(b: int) -> tuple[int, np.ndarray | None]:
        rng = sampling.batch_rng(seed, sampling.PURPOSE_RERANDOMIZE, b)
        combos = kernel.draw(rng, batch)
        alive = kernel.surviving(combos)
        alive = alive[b * batch + alive < max_draws]
        if alive.size == 0:
            return b, None
        return b, combos[alive[0]].copy()

    for b, winner in sampling.ordered_parallel_map(scan, range(n_batches), workers):
        if winner is None:
            continue
        rng_used = sampling.batch_rng(seed, sampling.PURPOSE_RERANDOMIZE, b)
        draws_attempted = _position_of(kernel, rng_used, winner, b, batch, max_draws)
        alloc = Allocation(
            spec=spec,
            combo_of_unit=winner,
            seed_info={"seed": seed, "batch": b, "draws_attempted": draws_attempted},
        )
        w = expand_assignment(alloc, mm)
        profile = balance_profile(x, w, rule.monitored_effects, cm=kernel.cm)
        if not accept(profile, rule):
            # Float tie right at a threshold between the batched and the
            # scalar path; treat as rejected and keep scanning.
            continue
        return RerandomizationResult(
            allocation=alloc,
            assignment=w,
            profile=profile,
            rule=rule,
            thresholds=thresholds,
            draws_attempted=draws_attempted,
            acceptance_probability=prob,
            elapsed_seconds=time.perf_counter() - t0,
            seed=seed,
            workers=workers,
        )
    raise MaxDrawsExceeded(
        f"no acceptable allocation within {max_draws} draws "
        f"(implied acceptance probability {prob:.3g})"
    )


def _position_of(
    kernel: sampling.BalanceKernel,
    rng: np.random.Generator,
    winner: np.ndarray,
    b: int,
    batch: int,
    max_draws: int,
) -> int:
    # Redraw the batch to recover the winner's in-batch position; cheaper
    # than shipping positions through the parallel map.
    combos = kernel.draw(rng, batch)
    pos = int(np.nonzero((combos == winner).all(axis=1))[0][0])
    attempted = b * batch + pos + 1
    if attempted > max_draws:
        raise MaxDrawsExceeded(f"no acceptable allocation within {max_draws} draws")
    return attempted


@dataclass(frozen=True, eq=False)
class EffectEstimates:
    """Difference-in-means estimates for a set of factorial effects."""

    effects: tuple[str, ...]
    estimates: dict[str, float]
    high_means: dict[str, float]
    low_means: dict[str, float]

    def estimate(self, effect: str) -> float:
        try:
            return self.estimates[effect]
        except KeyError:
            raise ValueError(f"no estimate for effect {effect!r}") from None


def estimate_effects(
    y_obs: np.ndarray, w: AssignmentMatrix, effects: Sequence[str]
) -> EffectEstimates:
    """Estimate each effect as the +group/-group outcome mean difference.

    Identical to (2/n) y . w_f for balanced designs; computed both ways and
    cross-checked.
    """
    y = np.ascontiguousarray(y_obs, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != w.n:
        raise DimensionMismatch(f"outcomes have shape {y.shape}, expected ({w.n},)")
    if not effects:
        raise ValueError("at least one effect is required")
    labels = tuple(effects)
    estimates: dict[str, float] = {}
    high: dict[str, float] = {}
    low: dict[str, float] = {}
    scale = max(1.0, float(np.max(np.abs(y))))
    for label in labels:
        col = w.column(label)
        hi = float(y[col > 0].mean())
        lo = float(y[col < 0].mean())
        inner = float((2.0 / w.n) * (y @ col))
        assert abs(inner - (hi - lo)) <= 1e-10 * scale
        estimates[label] = hi - lo
        high[label] = hi
        low[label] = lo
    return EffectEstimates(effects=labels, estimates=estimates, high_means=high, low_means=low)


@dataclass(frozen=True, eq=False)
class RandomizationTestResult:
    """Randomization test of the sharp null over the accepted-allocation set."""

    effects: tuple[str, ...]
    observed: dict[str, float]
    p_values: dict[str, float]
    null_summary: dict[str, dict[str, float]]
    n_reference: int
    draws_scanned: int
    seed: int

    def p_value(self, effect: str) -> float:
        try:
            return self.p_values[effect]
        except KeyError:
            raise ValueError(f"no test for effect {effect!r}") from None

    def to_dict(self) -> dict:
        return {
            "effects": list(self.effects),
            "observed": self.observed,
            "p_values": self.p_values,
            "null_summary": self.null_summary,
            "n_reference": self.n_reference,
            "draws_scanned": self.draws_scanned,
            "seed": self.seed,
        }


def randomization_test(
    y_obs: np.ndarray,
    alloc_obs: Allocation,
    x: CovariateMatrix,
    rule: AcceptanceRule,
    effects: Sequence[str],
    n_draws: int,
    seed: int,
    max_draws: int = 10 * DEFAULT_MAX_DRAWS,
    workers: int = 1,
    mm: ModelMatrix | None = None,
) -> RandomizationTestResult:
    """Test the sharp null of no effect, restricted to accepted allocations.

    Reference allocations are drawn by the same rejection sampler that
    produced the observed one; under the sharp null the observed outcomes are
    fixed, so each reference draw just relabels groups.  Two-sided p-values
    use the add-one convention: (1 + #{|t*| >= |t_obs|}) / (1 + n_draws).
    """
    if n_draws < 100:
        raise ValueError(f"need at least 100 reference draws for stable p-values, got {n_draws}")
    spec = alloc_obs.spec
    mm, kernel, _ = _prepare(x, spec, rule, mm)
    y = np.ascontiguousarray(y_obs, dtype=np.float64)
    if y.ndim != 1 or y.shape[0] != spec.n:
        raise DimensionMismatch(f"outcomes have shape {y.shape}, expected ({spec.n},)")
    if not effects:
        raise ValueError("at least one effect is required")
    labels = tuple(effects)
    w_obs = expand_assignment(alloc_obs, mm)
    obs_profile = balance_profile(x, w_obs, rule.monitored_effects, cm=kernel.cm)
    if not accept(obs_profile, rule):
        raise ValueError(
            "observed allocation fails the acceptance rule; the reference "
            "distribution would not contain it"
        )
    observed = {
        lab: est for lab, est in estimate_effects(y, w_obs, labels).estimates.items()
    }

    batch = sampling.STUDY_BATCH
    n_batches = -(-max_draws // batch)
    null_stats = np.empty((n_draws, len(labels)))
    collected = 0
    scanned = 0

    def scan(b: int) -> tuple[np.ndarray, np.ndarray]:
        rng = sampling.batch_rng(seed, sampling.PURPOSE_REFERENCE, b)
        combos = kernel.draw(rng, batch)
        alive = kernel.surviving(combos)
        kept = combos[alive]
        stats = np.empty((kept.shape[0], len(labels)))
        for j, lab in enumerate(labels):
            signs = kernel.sign_lookup(lab)[kept - 1]
            stats[:, j] = signs @ y * (2.0 / spec.n)
        return alive, stats

    for alive, stats in sampling.ordered_parallel_map(scan, range(n_batches), workers):
        room = min(max_draws - scanned, batch)
        usable = int(np.searchsorted(alive, room))
        take = min(usable, n_draws - collected)
        null_stats[collected : collected + take] = stats[:take]
        collected += take
        if collected >= n_draws:
            scanned += int(alive[take - 1]) + 1 if take else 0
            break
        scanned += room
        if scanned >= max_draws:
            break
    if collected < n_draws:
        raise MaxDrawsExceeded(
            f"collected {collected} of {n_draws} reference draws within {max_draws} candidates"
        )

    p_values: dict[str, float] = {}
    summary: dict[str, dict[str, float]] = {}
    for j, lab in enumerate(labels):
        col = null_stats[:, j]
        exceed = int(np.count_nonzero(np.abs(col) >= abs(observed[lab])))
        p_values[lab] = (1.0 + exceed) / (1.0 + n_draws)
        q = np.quantile(col, [0.025, 0.5, 0.975])
        summary[lab] = {
            "mean": float(col.mean()),
            "sd": float(col.std(ddof=1)),
            "q025": float(q[0]),
            "median": float(q[1]),
            "q975": float(q[2]),
        }
    return RandomizationTestResult(
        effects=labels,
        observed=observed,
        p_values=p_values,
        null_summary=summary,
        n_reference=n_draws,
        draws_scanned=scanned,
        seed=seed,
    )
