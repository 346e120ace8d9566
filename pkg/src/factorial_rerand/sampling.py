"""Internal machinery: batched candidate drawing and acceptance filtering.

Candidate allocations are organized into fixed-size batches.  Batch b is
always drawn from the generator seeded by (master seed, purpose, b), so the
global candidate sequence is a pure function of the master seed: workers
change scheduling, never results.  Acceptance scans the sequence in global
index order, which reproduces the single-threaded rejection sampler exactly.
"""

from __future__ import annotations

import itertools
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Iterator, TypeVar

import numpy as np
from scipy.linalg import solve_triangular

from .assignment import combination_multiset
from .balance import CovarianceModel, CovariateMatrix
from .criteria import chi2_cdf
from .design import DesignSpec, ModelMatrix

# Work unit of the rerandomization loop.  Small enough that the overshoot
# past an accepted draw stays negligible.
ENGINE_BATCH = 64
# Monte Carlo studies push much larger batches through the same kernel.
STUDY_BATCH = 4096

# Stream purposes keep independent uses of one master seed apart.
PURPOSE_RERANDOMIZE = 0
PURPOSE_REFERENCE = 1
PURPOSE_STUDY_PURE = 2
PURPOSE_STUDY_ACCEPTED = 3
PURPOSE_CALIBRATE = 4
PURPOSE_OUTCOMES = 5

T = TypeVar("T")
R = TypeVar("R")


def batch_rng(seed: int, purpose: int, batch: int) -> np.random.Generator:
    """Generator for one batch, derived statelessly from the master seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(purpose, batch)))


def ordered_parallel_map(
    fn: Callable[[T], R], items: Iterable[T], workers: int
) -> Iterator[R]:
    """Map with up to ``workers`` tasks in flight, yielding results in order.

    Results come back in input order no matter how threads are scheduled, so
    reductions over the stream are deterministic.  The input iterable may be
    infinite; the consumer breaks out when done.
    """
    if workers <= 1:
        for item in items:
            yield fn(item)
        return
    it = iter(items)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        window: deque = deque()
        for item in itertools.islice(it, workers):
            window.append(pool.submit(fn, item))
        while window:
            fut = window.popleft()
            try:
                nxt = next(it)
            except StopIteration:
                pass
            else:
                window.append(pool.submit(fn, nxt))
            yield fut.result()


class BalanceKernel:
    """Precomputed read-only state for scoring candidate allocations fast.

    Holds the centered covariates, the Cholesky factor of their covariance,
    and per-effect sign lookups indexed by combination.  Mean differences are
    shift-invariant (signed columns sum to zero), so centering is exact, not
    an approximation.  Thread-safe by construction: nothing here mutates.
    """

    def __init__(
        self,
        x: CovariateMatrix,
        spec: DesignSpec,
        mm: ModelMatrix,
        cm: CovarianceModel,
        thresholds: dict[str, float],
    ):
        if spec.n != x.n:
            raise ValueError(f"covariates have {x.n} rows for a design of {spec.n} units")
        self.spec = spec
        self.mm = mm
        self.cm = cm
        self.n = spec.n
        self.base = combination_multiset(spec)
        self.centered = x.entries - x.entries.mean(axis=0)
        self.centered.setflags(write=False)
        self.thresholds = dict(thresholds)
        # Screen the most selective effect first: survivors shrink fastest.
        self.screen_order = sorted(
            self.thresholds, key=lambda lab: chi2_cdf(cm.p, self.thresholds[lab])
        )
        self._signs: dict[str, np.ndarray] = {}

    def sign_lookup(self, label: str) -> np.ndarray:
        """Signed value of one effect column per combination index (float64)."""
        col = self._signs.get(label)
        if col is None:
            col = self.mm.column(label).astype(np.float64)
            col.setflags(write=False)
            self._signs[label] = col
        return col

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Fisher-Yates shuffle the combination multiset, one row per candidate."""
        tiled = np.repeat(self.base[None, :], size, axis=0)
        rng.permuted(tiled, axis=1, out=tiled)
        return tiled

    def mean_diffs(
        self, combos: np.ndarray, label: str, centered: np.ndarray | None = None
    ) -> np.ndarray:
        """(batch, p) mean-difference vectors for one effect."""
        x = self.centered if centered is None else centered
        signs = self.sign_lookup(label)[combos - 1]
        return signs @ x * (2.0 / self.n)

    def distances(self, diffs: np.ndarray) -> np.ndarray:
        """Squared Mahalanobis distances for a (batch, p) block of differences."""
        z = solve_triangular(self.cm.cholesky, diffs.T, lower=True, check_finite=False)
        return (self.n / 4.0) * np.einsum("ij,ij->j", z, z)

    def surviving(self, combos: np.ndarray) -> np.ndarray:
        """Indices (ascending) of candidates passing every monitored threshold."""
        alive = np.arange(combos.shape[0])
        for label in self.screen_order:
            if alive.size == 0:
                break
            d = self.mean_diffs(combos[alive], label)
            m = self.distances(d)
            alive = alive[m <= self.thresholds[label]]
        return alive

    def all_distances(self, combos: np.ndarray, labels: Iterable[str]) -> np.ndarray:
        """(batch, n_effects) distance matrix with no early exit (for studies)."""
        labels = tuple(labels)
        out = np.empty((combos.shape[0], len(labels)))
        for j, label in enumerate(labels):
            out[:, j] = self.distances(self.mean_diffs(combos, label))
        return out

    def estimates(self, combos: np.ndarray, label: str, y_table: np.ndarray) -> np.ndarray:
        """Effect estimates (2/n) y_obs . w_f for a batch, given potential outcomes.

        ``y_table`` is (n, 2^K); each candidate observes its own column per unit.
        """
        y_obs = y_table[np.arange(self.n)[None, :], combos - 1]
        signs = self.sign_lookup(label)[combos - 1]
        return np.einsum("bn,bn->b", signs, y_obs) * (2.0 / self.n)
