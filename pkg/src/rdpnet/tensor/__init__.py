"""From-scratch tensor core: numpy-backed values, tape, reverse-mode autodiff."""

from .core import (
    DEFAULT_DTYPE,
    SUPPORTED_DTYPES,
    Node,
    Tape,
    Tensor,
    backward,
    finite_checks,
    finite_checks_enabled,
    full,
    grad_enabled,
    no_grad,
    ones,
    set_finite_checks,
    tensor,
    zero_grads,
    zeros,
)
from .gradcheck import GradCheckReport, grad_check, relative_error
from .ops import (
    add,
    as_tensor,
    clamp_min,
    concat,
    conv2d,
    conv_transpose2d,
    div,
    erf,
    exp,
    getitem,
    log,
    mean,
    mul,
    neg,
    pad2d,
    pow_scalar,
    reshape,
    softmax,
    sqrt,
    sub,
    tsum,
    var,
)
from .rng import Rng

__all__ = [
    "DEFAULT_DTYPE",
    "SUPPORTED_DTYPES",
    "GradCheckReport",
    "Node",
    "Rng",
    "Tape",
    "Tensor",
    "add",
    "as_tensor",
    "backward",
    "clamp_min",
    "concat",
    "conv2d",
    "conv_transpose2d",
    "div",
    "erf",
    "exp",
    "finite_checks",
    "finite_checks_enabled",
    "full",
    "getitem",
    "grad_check",
    "grad_enabled",
    "log",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "ones",
    "pad2d",
    "pow_scalar",
    "relative_error",
    "reshape",
    "set_finite_checks",
    "softmax",
    "sqrt",
    "sub",
    "tensor",
    "tsum",
    "var",
    "zero_grads",
    "zeros",
]
