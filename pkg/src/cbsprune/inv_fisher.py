"""Damped block-diagonal inverse of the empirical Fisher.

Each block starts at ``I / damping`` and absorbs the gradient rows one at
a time through Sherman-Morrison, giving ``(damping*I + F_bb)^-1`` without
ever factorizing a matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .fisher import as_index_set


@dataclass
class InverseFisher:
    damping: float
    blocks: list[tuple[np.ndarray, np.ndarray]]

    def __post_init__(self):
        n = sum(idx.size for idx, _ in self.blocks)
        self.block_of = np.full(n, -1, dtype=np.intp)
        self.position = np.zeros(n, dtype=np.intp)
        for b, (idx, mat) in enumerate(self.blocks):
            if mat.shape != (idx.size, idx.size):
                raise ValueError(f"block {b}: matrix shape {mat.shape} does not match {idx.size} indices")
            if idx.size and (idx.min() < 0 or idx.max() >= n):
                raise ValueError("blocks do not tile a contiguous index range")
            if np.any(self.block_of[idx] >= 0):
                raise ValueError("blocks overlap")
            self.block_of[idx] = b
            self.position[idx] = np.arange(idx.size)
        if np.any(self.block_of < 0):
            raise ValueError("blocks do not cover every index")

    @property
    def n(self) -> int:
        return self.block_of.size

    def diagonal(self) -> np.ndarray:
        d = np.empty(self.n)
        for idx, mat in self.blocks:
            d[idx] = np.diag(mat)
        return d

    def dense(self) -> np.ndarray:
        out = np.zeros((self.n, self.n))
        for idx, mat in self.blocks:
            out[np.ix_(idx, idx)] = mat
        return out

    def split(self, pruned):
        """Yield ``(block matrix, block indices, positions of P in block, P entries)`` per touched block."""
        p = as_index_set(pruned, self.n)
        owners = self.block_of[p]
        for b in np.unique(owners):
            idx, mat = self.blocks[b]
            members = p[owners == b]
            yield mat, idx, self.position[members], members


def _block_ranges(n, block_size, boundaries):
    if block_size == 0:
        if boundaries is None:
            return [(0, n)]
        ranges = [(int(a), int(b)) for a, b in boundaries]
        if ranges[0][0] != 0 or ranges[-1][1] != n or any(r[1] != s[0] for r, s in zip(ranges, ranges[1:])):
            raise ValueError("block boundaries must tile [0, N)")
        return ranges
    return [(a, min(a + block_size, n)) for a in range(0, n, block_size)]


def woodfisher_inverse(fisher, damping=1e-4, block_size=0, boundaries=None) -> InverseFisher:
    """Block inverse of ``damping*I + F`` by rank-one recursion over the samples.

    ``block_size`` chunks the flat index into consecutive ranges; ``0`` means
    one block per entry of ``boundaries`` (layer ranges), or a single block
    when no boundaries are given.
    """
    if not damping > 0:
        raise NumericError(f"damping must be positive, got {damping}")
    if block_size < 0:
        raise ValueError("block_size must be >= 0")
    samples = 1.0 / fisher.scale
    blocks = []
    for start, stop in _block_ranges(fisher.n, block_size, boundaries):
        a = np.eye(stop - start) / damping
        for u in fisher.G[:, start:stop]:
            au = a @ u
            a -= np.outer(au, au) / (samples + u @ au)
        blocks.append((np.arange(start, stop), a))
    return InverseFisher(damping, blocks)


def inverse_of_dense(matrix, damping=0.0) -> InverseFisher:
    """Single-block exact inverse of ``matrix + damping*I``."""
    h = np.asarray(matrix, dtype=np.float64)
    try:
        inv = np.linalg.inv(h + damping * np.eye(h.shape[0]))
    except np.linalg.LinAlgError as exc:
        raise NumericError("Hessian is singular; add damping") from exc
    return InverseFisher(damping, [(np.arange(h.shape[0]), inv)])


def inv_submatrix(inv: InverseFisher, pruned) -> np.ndarray:
    """``[H^-1]_{P,P}``; entries across blocks are zero."""
    p = as_index_set(pruned, inv.n)
    out = np.zeros((p.size, p.size))
    where = {int(i): k for k, i in enumerate(p)}
    for mat, _, pos, members in inv.split(p):
        rows = [where[int(i)] for i in members]
        out[np.ix_(rows, rows)] = mat[np.ix_(pos, pos)]
    return out


def inv_columns(inv: InverseFisher, pruned) -> np.ndarray:
    """Stack of ``H^-1 e_i`` for ``i`` in P, shape (N, |P|)."""
    p = as_index_set(pruned, inv.n)
    out = np.zeros((inv.n, p.size))
    where = {int(i): k for k, i in enumerate(p)}
    for mat, idx, pos, members in inv.split(p):
        cols = [where[int(i)] for i in members]
        out[np.ix_(idx, cols)] = mat[:, pos]
    return out
