"""Closed-form update of the surviving weights for a fixed pruned set.

Minimizing ``0.5 * dw^T H dw`` subject to ``dw_P = -w_P`` gives

    [H^-1]_{P,P} lam = w_P,      dw = -H^-1[:, P] lam,      w* = w + dw

Under a block-diagonal inverse the solve splits into independent blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .fisher import as_index_set, complement


@dataclass
class UpdateResult:
    w_star: np.ndarray
    lambda_star: np.ndarray
    predicted_increase: float
    delta: np.ndarray


def _solve(matrix, rhs):
    try:
        out = np.linalg.solve(matrix, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericError("[H^-1]_{P,P} is singular; increase damping") from exc
    if not np.all(np.isfinite(out)):
        raise NumericError("[H^-1]_{P,P} is numerically singular; increase damping")
    return out


def cbs_update(inv, w, pruned, hessian=None) -> UpdateResult:
    """Optimal survivors given the pruned set.

    ``predicted_increase`` is ``0.5 * dw^T H dw`` under ``hessian`` when one
    is given, otherwise under the matrix whose inverse ``inv`` represents,
    which reduces to ``0.5 * lam^T [H^-1]_{P,P} lam``.
    """
    w = np.asarray(w, dtype=np.float64)
    p = as_index_set(pruned, inv.n)
    delta = np.zeros_like(w)
    lam = np.zeros(p.size)
    slot = {int(i): k for k, i in enumerate(p)}
    implied = 0.0
    for mat, idx, pos, members in inv.split(p):
        sub = mat[np.ix_(pos, pos)]
        lam_b = _solve(sub, w[members])
        delta[idx] -= mat[:, pos] @ lam_b
        lam[[slot[int(i)] for i in members]] = lam_b
        implied += 0.5 * float(lam_b @ sub @ lam_b)
    w_star = w + delta
    w_star[p] = 0.0
    delta[p] = -w[p]
    predicted = hessian.quadratic(delta) if hessian is not None else implied
    return UpdateResult(w_star, lam, float(predicted), delta)


def obs_single_update(inv, w, q: int, hessian=None) -> UpdateResult:
    """Single-weight surgeon step ``dw = -(w_q / [H^-1]_qq) H^-1 e_q``."""
    w = np.asarray(w, dtype=np.float64)
    b = inv.block_of[q]
    idx, mat = inv.blocks[b]
    pos = inv.position[q]
    d = mat[pos, pos]
    if not d > 0:
        raise NumericError(f"[H^-1]_{{{q},{q}}} = {d} is not positive")
    lam = w[q] / d
    delta = np.zeros_like(w)
    delta[idx] = -lam * mat[:, pos]
    w_star = w + delta
    w_star[q] = 0.0
    delta[q] = -w[q]
    predicted = hessian.quadratic(delta) if hessian is not None else 0.5 * lam * lam * d
    return UpdateResult(w_star, np.array([lam]), float(predicted), delta)


def reduced_system_update(h_dense, w, pruned) -> np.ndarray:
    """Constrained minimizer's ``dw`` by solving over the free coordinates.

    ``H_FF dw_F = H_FP w_P`` with ``dw_P = -w_P``.
    """
    h = np.asarray(h_dense, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    p = as_index_set(pruned, h.shape[0])
    f = complement(p, h.shape[0])
    delta = np.zeros_like(w)
    delta[p] = -w[p]
    if f.size:
        try:
            delta[f] = np.linalg.solve(h[np.ix_(f, f)], h[np.ix_(f, p)] @ w[p])
        except np.linalg.LinAlgError as exc:
            raise NumericError("free block of H is singular") from exc
    return delta
