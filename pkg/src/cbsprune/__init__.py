"""Joint second-order pruning: selection of the pruned set and update of the survivors.

Jointly selects the weights to remove under a quadratic (empirical-Fisher)
model of the loss, then updates the survivors in closed form::

    from cbsprune import EmpiricalFisher, cbs_select, woodfisher_inverse, cbs_update

    fisher = EmpiricalFisher(grads)               # K x N per-sample gradients
    mask = cbs_select(w, fisher, r=0.9)
    inv = woodfisher_inverse(fisher, damping=1e-4)
    w_new = cbs_update(inv, w, mask.indices).w_star
"""

from .fisher import DenseHessian, EmpiricalFisher, build_fisher, surrogate_loss
from .inv_fisher import InverseFisher, inv_columns, inv_submatrix, woodfisher_inverse
from .selection import (
    ConstructiveParams,
    LocalSearchParams,
    PruneMask,
    ScoreTable,
    brute_force_select,
    cbs_select,
    greedy_randomized_select,
    local_search,
    magnitude_select,
    obs_score_select,
)
from .tensor_io import GradientMatrix, RunConfig, WeightStore
from .update import UpdateResult, cbs_update, obs_single_update, reduced_system_update

__version__ = "0.1.0"

__all__ = [
    "ConstructiveParams",
    "DenseHessian",
    "EmpiricalFisher",
    "GradientMatrix",
    "InverseFisher",
    "LocalSearchParams",
    "PruneMask",
    "RunConfig",
    "ScoreTable",
    "UpdateResult",
    "WeightStore",
    "brute_force_select",
    "build_fisher",
    "cbs_select",
    "cbs_update",
    "greedy_randomized_select",
    "inv_columns",
    "inv_submatrix",
    "local_search",
    "magnitude_select",
    "obs_score_select",
    "obs_single_update",
    "reduced_system_update",
    "surrogate_loss",
    "woodfisher_inverse",
]
