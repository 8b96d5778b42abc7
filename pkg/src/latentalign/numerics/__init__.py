"""Dense array arithmetic, feedforward nets, reverse-mode gradients, Adam."""

from latentalign.numerics import tape
from latentalign.numerics.adam import AdamState, adam_step
from latentalign.numerics.nn import (
    LayerSpec,
    ParamStore,
    compute_gradient,
    forward_mlp,
    init_mlp_params,
    mlp_apply,
    scaled_shifted_sigmoid,
)
from latentalign.numerics.tape import Var

__all__ = [
    "AdamState",
    "LayerSpec",
    "ParamStore",
    "Var",
    "adam_step",
    "compute_gradient",
    "forward_mlp",
    "init_mlp_params",
    "mlp_apply",
    "scaled_shifted_sigmoid",
    "tape",
]
