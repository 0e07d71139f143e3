"""Small reverse-mode autodiff engine over float64 numpy arrays."""

from . import ops
from .gradcheck import analytic_gradient, gradient_check, numeric_gradient
from .ops import (
    conv1d_causal,
    conv_transpose1d,
    cumulative_layer_norm,
    frame_layer_norm,
    pointwise,
    power_normalize,
)
from .tensor import Graph, Tensor, as_tensor, backward, current_graph, no_grad

__all__ = [
    "Graph",
    "Tensor",
    "analytic_gradient",
    "as_tensor",
    "backward",
    "conv1d_causal",
    "conv_transpose1d",
    "cumulative_layer_norm",
    "current_graph",
    "frame_layer_norm",
    "gradient_check",
    "no_grad",
    "numeric_gradient",
    "ops",
    "pointwise",
    "power_normalize",
]
