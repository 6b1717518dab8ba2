from .gradcheck import grad_check, numeric_grad
from .ops import (
    abs,
    add,
    bilinear_resize,
    clip,
    concat,
    concat_channels,
    conv2d,
    div,
    exp,
    group_norm,
    log,
    matmul,
    mean,
    mul,
    neg,
    permute,
    relu,
    reshape,
    resize_array,
    scalar_max,
    sigmoid,
    slice_axis,
    softmax,
    softmax_over,
    split_channels,
    sub,
    sum,
)
from .tensor import Tensor, as_tensor, computation_record, default_dtype, no_grad, precision

__all__ = [
    "Tensor", "as_tensor", "computation_record", "default_dtype", "no_grad", "precision",
    "grad_check", "numeric_grad", "abs", "add", "bilinear_resize", "clip", "concat", "concat_channels",
    "conv2d", "div", "exp", "group_norm", "log", "matmul", "mean", "mul", "neg", "permute",
    "relu", "reshape", "resize_array", "scalar_max", "sigmoid", "slice_axis", "softmax",
    "softmax_over", "split_channels", "sub", "sum",
]
