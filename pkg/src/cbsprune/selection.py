"""Choosing which weights to prune.

Baselines (magnitude, independent OBS score), the bucketed randomized
magnitude construction, the swapping local search over the quadratic
surrogate, and an exhaustive optimum for small instances.

Scores follow the local-search convention of not halving: ``alpha``,
``beta`` and ``gamma`` are twice the corresponding surrogate-loss changes.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NumericError
from .fisher import as_index_set, complement, surrogate_loss

LossEval = Callable[[np.ndarray], float]


def n_pruned(r: float, n: int) -> int:
    """``ceil(r * N)``, robust to ``r * N`` landing a hair above an integer."""
    if not 0.0 < r <= 1.0:
        raise ValueError(f"sparsity must lie in (0, 1], got {r}")
    return min(n, math.ceil(round(r * n, 9)))


@dataclass
class PruneMask:
    indices: np.ndarray
    n: int

    def __post_init__(self):
        self.indices = as_index_set(self.indices, self.n)

    @property
    def size(self) -> int:
        return self.indices.size

    def __len__(self):
        return self.indices.size

    def __eq__(self, other):
        if not isinstance(other, PruneMask):
            return NotImplemented
        return self.n == other.n and np.array_equal(self.indices, other.indices)

    def complement(self) -> np.ndarray:
        return complement(self.indices, self.n)

    def as_bool(self) -> np.ndarray:
        y = np.zeros(self.n, dtype=bool)
        y[self.indices] = True
        return y


@dataclass
class LocalSearchParams:
    epsilon: float = 1e-4
    tau: int = 20
    rho: int = 10
    steps_max: int = 50
    noimp_max: int = 5

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if min(self.tau, self.rho, self.steps_max, self.noimp_max) < 1:
            raise ValueError("tau, rho, steps_max and noimp_max must be >= 1")


@dataclass
class ConstructiveParams:
    buckets: int = 64
    samples: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.buckets < 1 or self.samples < 1:
            raise ValueError("buckets and samples must be >= 1")


def surrogate_evaluator(hessian, w) -> LossEval:
    return lambda p: surrogate_loss(hessian, w, p)


# --- baselines --------------------------------------------------------------

def magnitude_select(w, k: int) -> PruneMask:
    """The ``k`` smallest ``|w_i|``; ties go to the smaller index."""
    w = np.asarray(w, dtype=np.float64)
    if not 0 <= k <= w.size:
        raise ValueError(f"cannot prune {k} of {w.size} weights")
    return PruneMask(np.argsort(np.abs(w), kind="stable")[:k], w.size)


def obs_scores(w, inv) -> np.ndarray:
    d = inv.diagonal()
    if np.any(d <= 0):
        raise NumericError("inverse Hessian has a non-positive diagonal entry; increase damping")
    w = np.asarray(w, dtype=np.float64)
    return w * w / (2.0 * d)


def obs_score_select(w, inv, k: int) -> PruneMask:
    """The ``k`` weights with the smallest independent OBS saliency."""
    scores = obs_scores(w, inv)
    if not 0 <= k <= scores.size:
        raise ValueError(f"cannot prune {k} of {scores.size} weights")
    return PruneMask(np.argsort(scores, kind="stable")[:k], scores.size)


# --- scores -----------------------------------------------------------------

def gamma(hessian, w, i: int, j: int) -> float:
    """Interaction ``w_i H_ij w_j + w_j H_ji w_i`` of two distinct weights."""
    if i == j:
        raise ValueError("gamma is defined for distinct indices only")
    return float(w[i] * hessian.entry(i, j) * w[j] + w[j] * hessian.entry(j, i) * w[i])


def compute_alpha(hessian, w, pruned) -> dict[int, float]:
    """Element-by-element alpha over P."""
    p = as_index_set(pruned, hessian.n)
    out = {}
    for i in p:
        value = w[i] * hessian.entry(i, i) * w[i]
        for j in p:
            if j != i:
                value += gamma(hessian, w, i, j)
        out[int(i)] = float(value)
    return out


def compute_beta(hessian, w, pruned) -> dict[int, float]:
    """Element-by-element beta over the complement of P."""
    p = as_index_set(pruned, hessian.n)
    out = {}
    for j in complement(p, hessian.n):
        value = w[j] * hessian.entry(j, j) * w[j]
        for i in p:
            value += gamma(hessian, w, i, j)
        out[int(j)] = float(value)
    return out


def compute_scores_matrixform(hessian, w, pruned):
    """``(alpha over P, beta over complement)`` as arrays, through sub-block products only."""
    w = np.asarray(w, dtype=np.float64)
    p = as_index_set(pruned, hessian.n)
    q = complement(p, hessian.n)
    wp, wq = w[p], w[q]
    alpha = wp * hessian.subproduct(p, p, wp) + hessian.tsubproduct(p, p, wp) * wp - wp * hessian.diagonal(p) * wp
    beta = wq * hessian.subproduct(q, p, wp) + hessian.tsubproduct(p, q, wp) * wq + wq * hessian.diagonal(q) * wq
    return alpha, beta


@dataclass
class ScoreTable:
    """Per-step local-search state: alpha on P, beta on the complement, orderings."""

    hessian: object
    w: np.ndarray
    pruned: np.ndarray
    alpha: np.ndarray
    unpruned: np.ndarray
    beta: np.ndarray
    pi: np.ndarray = field(init=False)
    theta: np.ndarray = field(init=False)

    def __post_init__(self):
        n = self.hessian.n
        self.alpha_at = np.full(n, np.nan)
        self.alpha_at[self.pruned] = self.alpha
        self.beta_at = np.full(n, np.nan)
        self.beta_at[self.unpruned] = self.beta
        # nonincreasing alpha; pruned is sorted so stable ties favour smaller index
        self.pi = self.pruned[np.argsort(-self.alpha, kind="stable")]
        if self.pi.size and self.unpruned.size:
            lead = self.pi[0]
            g = self.w[lead] * self.w[self.unpruned] * self.hessian.pair_vector(lead)[self.unpruned]
            self.theta = self.unpruned[np.argsort(self.beta - g, kind="stable")]
        else:
            self.theta = self.unpruned.copy()

    @classmethod
    def build(cls, hessian, w, pruned) -> "ScoreTable":
        w = np.asarray(w, dtype=np.float64)
        p = as_index_set(pruned, hessian.n)
        alpha, beta = compute_scores_matrixform(hessian, w, p)
        return cls(hessian, w, p, alpha, complement(p, hessian.n), beta)

    def gamma(self, i, j) -> float:
        return gamma(self.hessian, self.w, i, j)


def swap_gain(scores: ScoreTable, hessian, w, swapped_out, swapped_in, i: int, j: int) -> float:
    """Twice the surrogate change of also swapping ``i`` out and ``j`` in.

    ``swapped_out`` (I) and ``swapped_in`` (J) are the swaps already
    accepted in the current step, on top of which the new one applies.
    """
    out_set, in_set = {int(x) for x in swapped_out}, {int(x) for x in swapped_in}
    pruned = {int(x) for x in scores.pruned}
    if i not in pruned or i in out_set:
        raise ValueError(f"{i} must be pruned and not already swapped out")
    if j in pruned or j in in_set:
        raise ValueError(f"{j} must be unpruned and not already swapped in")
    in_part = scores.beta_at[j] + sum(gamma(hessian, w, j, b) for b in in_set) - sum(gamma(hessian, w, a, j) for a in out_set)
    out_part = scores.alpha_at[i] + sum(gamma(hessian, w, i, b) for b in in_set) - sum(gamma(hessian, w, i, a) for a in out_set)
    return float(in_part - gamma(hessian, w, i, j) - out_part)


# --- local search -------------------------------------------------------------

@dataclass
class SwapEvent:
    step: int
    pruned: tuple[int, ...]
    swapped_out: tuple[int, ...]
    swapped_in: tuple[int, ...]
    i: int
    j: int
    gain: float


def local_search(mask: PruneMask, hessian, w, params: LocalSearchParams | None = None,
                 loss_eval: LossEval | None = None, trace: list | None = None) -> PruneMask:
    """Improve ``mask`` by batches of pairwise swaps, returning the best visited set.

    Each step rebuilds the scores from the current set, visits the pruned
    weights by decreasing alpha and, for the pruned weight at rank ``ii``,
    tries the unpruned candidates at ranks ``ii - rho .. ii + rho`` of the
    theta ordering. The first candidate whose gain is ``<= -epsilon`` on top
    of the swaps already accepted in this step is taken. After ``tau`` net
    misses the step ends, all accepted swaps are applied at once and the
    resulting set is scored with ``loss_eval``.

    If ``trace`` is a list, one :class:`SwapEvent` per accepted swap is appended.
    """
    params = params or LocalSearchParams()
    w = np.asarray(w, dtype=np.float64)
    n = hessian.n
    if mask.n != n or w.size != n:
        raise ValueError("mask, weights and Hessian disagree on N")
    loss_eval = loss_eval or surrogate_evaluator(hessian, w)
    eps = params.epsilon

    current = mask.indices.copy()
    best, best_loss = current, loss_eval(current)
    last_improved = 0
    for step in range(1, params.steps_max + 1):
        if current.size == 0 or current.size == n:
            break
        scores = ScoreTable.build(hessian, w, current)
        pi, theta = scores.pi, scores.theta
        alpha_at, beta_at = scores.alpha_at, scores.beta_at
        lead, top = pi[0], theta[0]
        if beta_at[top] - gamma(hessian, w, lead, top) - alpha_at[lead] > -eps:
            break

        out, into = [], []
        taken = np.zeros(n, dtype=bool)
        sum_out = np.zeros(n)  # sum over I of w_a * (H[:, a] + H[a, :])
        sum_in = np.zeros(n)
        misses = 0
        for rank, i in enumerate(pi, start=1):
            misses += 1
            lo, hi = max(1, rank - params.rho), min(theta.size, rank + params.rho)
            if lo <= hi:
                cand = theta[lo - 1:hi]
                cand = cand[~taken[cand]]
                if cand.size:
                    pair_i = hessian.pair_vector(i)
                    wc = w[cand]
                    gains = ((beta_at[cand] + wc * sum_in[cand] - wc * sum_out[cand])
                             - w[i] * wc * pair_i[cand]
                             - (alpha_at[i] + w[i] * sum_in[i] - w[i] * sum_out[i]))
                    hits = np.flatnonzero(gains <= -eps)
                    if hits.size:
                        j = int(cand[hits[0]])
                        if trace is not None:
                            trace.append(SwapEvent(step, tuple(int(x) for x in current), tuple(out),
                                                   tuple(into), int(i), j, float(gains[hits[0]])))
                        out.append(int(i))
                        into.append(j)
                        taken[j] = True
                        misses -= 1
                        sum_out += w[i] * pair_i
                        sum_in += w[j] * hessian.pair_vector(j)
            if misses >= params.tau:
                break
        if not out:
            break

        current = np.union1d(np.setdiff1d(current, out), into)
        loss = loss_eval(current)
        if loss < best_loss:
            best, best_loss, last_improved = current, loss, step
        elif step - last_improved > params.noimp_max:
            break
    return PruneMask(best, n)


# --- randomized construction ----------------------------------------------------

def _bucket_select(w_abs, buckets, r, k):
    """Per-bucket magnitude selection with proportional quotas summing to ``k``."""
    ordered = [b[np.lexsort((b, w_abs[b]))] for b in buckets]
    quota = [min(b.size, math.floor(round(r * b.size, 9))) for b in ordered]
    remaining = k - sum(quota)
    while remaining > 0:
        # next unpruned weight per bucket, smallest magnitude (then index) wins a slot
        open_ = [(w_abs[b[q]], b[q], t) for t, (b, q) in enumerate(zip(ordered, quota)) if q < b.size]
        if not open_:
            break
        for _, _, t in sorted(open_)[:remaining]:
            quota[t] += 1
            remaining -= 1
    picked = [b[:q] for b, q in zip(ordered, quota)]
    return np.sort(np.concatenate(picked)) if picked else np.empty(0, dtype=np.intp)


def greedy_randomized_select(w, r: float, params: ConstructiveParams | None = None,
                             loss_eval: LossEval | None = None) -> PruneMask:
    """Best of ``samples`` bucketed magnitude selections under ``loss_eval``.

    Sample ``s`` shuffles the indices with seed ``seed ^ s`` and cuts the
    permutation into buckets of ``ceil(N / buckets)``; each bucket prunes
    ``floor(r * |bucket|)`` of its smallest weights and the leftover slots go
    to the buckets holding the smallest next candidates.
    """
    params = params or ConstructiveParams()
    w = np.asarray(w, dtype=np.float64)
    n = w.size
    k = n_pruned(r, n)
    if loss_eval is None:
        if params.samples > 1:
            raise ValueError("a loss evaluator is needed to compare more than one sample")
        loss_eval = lambda p: 0.0  # noqa: E731
    w_abs = np.abs(w)
    size = math.ceil(n / params.buckets)
    best, best_loss = None, math.inf
    for s in range(params.samples):
        perm = np.random.default_rng(params.seed ^ s).permutation(n)
        buckets = [perm[a:a + size] for a in range(0, n, size)]
        cand = _bucket_select(w_abs, buckets, r, k)
        loss = loss_eval(cand)
        if best is None or loss < best_loss:
            best, best_loss = cand, loss
    return PruneMask(best, n)


def cbs_select(w, hessian, r: float, ls_params: LocalSearchParams | None = None,
               ctor_params: ConstructiveParams | None = None, loss_eval: LossEval | None = None,
               trace: list | None = None) -> PruneMask:
    """Start from the better of magnitude and randomized construction, then local search."""
    w = np.asarray(w, dtype=np.float64)
    loss_eval = loss_eval or surrogate_evaluator(hessian, w)
    k = n_pruned(r, w.size)
    start = magnitude_select(w, k)
    constructed = greedy_randomized_select(w, r, ctor_params, loss_eval)
    if loss_eval(constructed.indices) < loss_eval(start.indices):
        start = constructed
    return local_search(start, hessian, w, ls_params, loss_eval, trace)


# --- exhaustive oracle --------------------------------------------------------

def brute_force_select(hessian, w, k: int, guard: int = 10**6, chunk: int = 20000):
    """Global minimizer of the selection-only surrogate over all ``C(N, k)`` sets.

    Ties resolve to the lexicographically smallest index set.
    """
    w = np.asarray(w, dtype=np.float64)
    n = w.size
    total = math.comb(n, k)
    if total > guard:
        raise ValueError(f"C({n}, {k}) = {total} subsets exceeds the guard of {guard}")
    if k == 0:
        return PruneMask(np.empty(0, dtype=np.intp), n), 0.0
    h = hessian.dense()
    m = 0.5 * (w[:, None] * h * w[None, :])
    combos = itertools.combinations(range(n), k)
    best, best_value = None, math.inf
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=np.intp).reshape(-1, k)
        if block.shape[0] == 0:
            break
        values = m[block[:, :, None], block[:, None, :]].sum(axis=(1, 2))
        at = int(np.argmin(values))
        if values[at] < best_value:
            best, best_value = block[at], float(values[at])
    return PruneMask(best, n), best_value
