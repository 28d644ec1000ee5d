"""Method dispatch: selection for each pruning method plus the optional update."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fisher import DenseHessian, surrogate_loss
from .inv_fisher import inverse_of_dense, woodfisher_inverse
from .mlp import LabeledBatch, MlpNetwork, apply_mask_loss
from .selection import (
    ConstructiveParams,
    LocalSearchParams,
    PruneMask,
    cbs_select,
    magnitude_select,
    n_pruned,
    obs_score_select,
    surrogate_evaluator,
)
from .tensor_io import RunConfig
from .update import cbs_update


@dataclass
class PruneOutcome:
    method: str
    mask: PruneMask
    weights: np.ndarray
    surrogate_loss: float
    updated: bool


def local_search_params(cfg: RunConfig) -> LocalSearchParams:
    return LocalSearchParams(cfg.epsilon, cfg.tau, cfg.rho, cfg.steps_max, cfg.noimp_max)


def constructive_params(cfg: RunConfig) -> ConstructiveParams:
    return ConstructiveParams(cfg.buckets, cfg.samples, cfg.seed)


def make_inverse(hessian, cfg: RunConfig, boundaries=None):
    if isinstance(hessian, DenseHessian):
        return inverse_of_dense(hessian.H)
    return woodfisher_inverse(hessian, cfg.damping, cfg.block_size, boundaries)


def make_loss_eval(cfg: RunConfig, hessian, w, net: MlpNetwork | None = None,
                   calibration: LabeledBatch | None = None):
    if cfg.loss_eval == "network":
        if net is None or calibration is None:
            raise ValueError("loss-eval 'network' needs a network and a calibration batch")
        return lambda p: apply_mask_loss(net, p, calibration)
    return surrogate_evaluator(hessian, w)


def prune(method: str, w, hessian, cfg: RunConfig, *, inverse=None, boundaries=None,
          loss_eval=None, update: bool | None = None) -> PruneOutcome:
    """Select ``ceil(r N)`` weights by ``method`` and zero (or update) them.

    ``update`` defaults to True only for ``cbs``; passing True with another
    method applies the closed-form update on top of that method's selection.
    """
    w = np.asarray(w, dtype=np.float64)
    k = n_pruned(cfg.sparsity, w.size)
    update = (method == "cbs") if update is None else update
    needs_inverse = update or method == "wfs"
    if needs_inverse and inverse is None:
        inverse = make_inverse(hessian, cfg, boundaries)

    if method == "mp":
        mask = magnitude_select(w, k)
    elif method == "wfs":
        mask = obs_score_select(w, inverse, k)
    elif method in ("cbs-s", "cbs"):
        loss_eval = loss_eval or surrogate_evaluator(hessian, w)
        mask = cbs_select(w, hessian, cfg.sparsity, local_search_params(cfg), constructive_params(cfg), loss_eval)
    else:
        raise ValueError(f"unknown method {method!r}")

    if update:
        result = cbs_update(inverse, w, mask.indices, hessian)
        return PruneOutcome(method, mask, result.w_star, result.predicted_increase, True)
    pruned = w.copy()
    pruned[mask.indices] = 0.0
    return PruneOutcome(method, mask, pruned, surrogate_loss(hessian, w, mask.indices), False)
