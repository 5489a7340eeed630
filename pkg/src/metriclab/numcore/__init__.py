"""Dense float32 tensor math with reverse-mode differentiation and Adam."""

from .tensor import (
    GraphError,
    NumericError,
    Parameter,
    ShapeError,
    Tensor,
    add,
    backward,
    concat,
    cross_entropy,
    embedding_gather,
    gelu,
    layer_norm,
    masked_softmax,
    matmul,
    mean_squared_error,
    mul,
    no_grad,
    primitive_forward,
    reshape,
    scale,
    set_strict_finite,
    slice_axis,
    softmax,
    strict_finite_enabled,
    take_rows,
    transpose,
)
from .optim import Adam, AdamState, adam_step, lr_at

__all__ = [
    "Adam",
    "AdamState",
    "GraphError",
    "NumericError",
    "Parameter",
    "ShapeError",
    "Tensor",
    "adam_step",
    "add",
    "backward",
    "concat",
    "cross_entropy",
    "embedding_gather",
    "gelu",
    "layer_norm",
    "lr_at",
    "masked_softmax",
    "matmul",
    "mean_squared_error",
    "mul",
    "no_grad",
    "primitive_forward",
    "reshape",
    "scale",
    "set_strict_finite",
    "slice_axis",
    "softmax",
    "strict_finite_enabled",
    "take_rows",
    "transpose",
]
