"""Quadratic loss surrogate backed by the empirical Fisher.

The Fisher ``F = (1/K) G^T G`` is never materialized; products with any
sub-block go through the K gradient rows, costing ``K * (|S1| + |S2|)``.
:class:`DenseHessian` exposes the same interface over an explicit matrix,
which need not be symmetric.
"""

from __future__ import annotations

import numpy as np

from .errors import FormatError
from .tensor_io import GradientMatrix

DENSE_CAP = 2000


def as_index_set(indices, n: int) -> np.ndarray:
    """Validate and return ``indices`` as a strictly increasing intp array."""
    idx = np.asarray(getattr(indices, "indices", indices), dtype=np.intp).reshape(-1)
    idx = np.sort(idx)
    if idx.size and (idx[0] < 0 or idx[-1] >= n):
        raise IndexError(f"index set has entries outside [0, {n})")
    if idx.size > 1 and np.any(idx[1:] == idx[:-1]):
        raise ValueError("index set contains duplicates")
    return idx


def complement(indices, n: int) -> np.ndarray:
    keep = np.ones(n, dtype=bool)
    keep[indices] = False
    return np.flatnonzero(keep)


class EmpiricalFisher:
    def __init__(self, rows, scale=None):
        rows = rows.rows if isinstance(rows, GradientMatrix) else np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise FormatError("need at least one gradient row")
        if not np.all(np.isfinite(rows)):
            raise FormatError("gradient rows contain non-finite entries")
        self.G = rows
        self.scale = 1.0 / rows.shape[0] if scale is None else float(scale)

    symmetric = True

    @property
    def n(self) -> int:
        return self.G.shape[1]

    @property
    def k(self) -> int:
        return self.G.shape[0]

    def subproduct(self, s1, s2, v) -> np.ndarray:
        """``H[s1, s2] @ v`` as ``scale * sum_n g_s1 (g_s2 . v)``."""
        s1, s2 = as_index_set(s1, self.n), as_index_set(s2, self.n)
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (s2.size,):
            raise ValueError(f"vector of length {v.shape} does not match |S2|={s2.size}")
        return self.scale * (self.G[:, s1].T @ (self.G[:, s2] @ v))

    def tsubproduct(self, s1, s2, v) -> np.ndarray:
        """``H[s1, s2].T @ v`` for ``v`` over ``s1``."""
        return self.subproduct(s2, s1, v)

    def diagonal(self, s=None) -> np.ndarray:
        cols = self.G if s is None else self.G[:, as_index_set(s, self.n)]
        return self.scale * np.einsum("kn,kn->n", cols, cols)

    def entry(self, i, j) -> float:
        return float(self.scale * (self.G[:, i] @ self.G[:, j]))

    def pair_vector(self, a) -> np.ndarray:
        """``H[:, a] + H[a, :]`` over all N indices."""
        return 2.0 * self.scale * (self.G.T @ self.G[:, a])

    def quadratic(self, v) -> float:
        """``0.5 * v^T H v``."""
        gv = self.G @ np.asarray(v, dtype=np.float64)
        return 0.5 * self.scale * float(gv @ gv)

    def dense(self, cap=DENSE_CAP) -> np.ndarray:
        if self.n > cap:
            raise MemoryError(f"refusing to materialize a {self.n}x{self.n} Fisher (cap {cap})")
        h = self.scale * (self.G.T @ self.G)
        return 0.5 * (h + h.T)


class DenseHessian:
    """Explicit N x N matrix usable wherever an :class:`EmpiricalFisher` is."""

    def __init__(self, matrix):
        h = np.array(matrix, dtype=np.float64)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise ValueError(f"Hessian must be square, got shape {h.shape}")
        if not np.all(np.isfinite(h)):
            raise ValueError("Hessian contains non-finite entries")
        self.H = h
        self.symmetric = bool(np.array_equal(h, h.T))

    @property
    def n(self) -> int:
        return self.H.shape[0]

    def subproduct(self, s1, s2, v) -> np.ndarray:
        s1, s2 = as_index_set(s1, self.n), as_index_set(s2, self.n)
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (s2.size,):
            raise ValueError(f"vector of length {v.shape} does not match |S2|={s2.size}")
        return self.H[np.ix_(s1, s2)] @ v

    def tsubproduct(self, s1, s2, v) -> np.ndarray:
        s1, s2 = as_index_set(s1, self.n), as_index_set(s2, self.n)
        return self.H[np.ix_(s1, s2)].T @ np.asarray(v, dtype=np.float64)

    def diagonal(self, s=None) -> np.ndarray:
        d = np.diag(self.H).copy()
        return d if s is None else d[as_index_set(s, self.n)]

    def entry(self, i, j) -> float:
        return float(self.H[i, j])

    def pair_vector(self, a) -> np.ndarray:
        return self.H[:, a] + self.H[a, :]

    def quadratic(self, v) -> float:
        v = np.asarray(v, dtype=np.float64)
        return 0.5 * float(v @ self.H @ v)

    def dense(self, cap=DENSE_CAP) -> np.ndarray:
        return self.H.copy()


def build_fisher(grads) -> EmpiricalFisher:
    return EmpiricalFisher(grads)


def subproduct(hessian, s1, s2, v) -> np.ndarray:
    return hessian.subproduct(s1, s2, v)


def dense(hessian, cap=DENSE_CAP) -> np.ndarray:
    return hessian.dense(cap)


def surrogate_loss(hessian, w, pruned) -> float:
    """Selection-only quadratic loss ``0.5 * sum_{i,j in P} w_i H_ij w_j``."""
    w = np.asarray(w, dtype=np.float64)
    p = as_index_set(pruned, hessian.n)
    if p.size == 0:
        return 0.0
    if isinstance(hessian, EmpiricalFisher):
        gp = hessian.G[:, p] @ w[p]
        return 0.5 * hessian.scale * float(gp @ gp)
    return 0.5 * float(w[p] @ hessian.subproduct(p, p, w[p]))
