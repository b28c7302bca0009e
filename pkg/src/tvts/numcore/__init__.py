from tvts.numcore.gradcheck import grad_check
from tvts.numcore.optim import GROUPS, OptimizerState, Parameter, adamw_step, zero_grad
from tvts.numcore.tensor import (
    DTYPES,
    Tensor,
    add,
    as_tensor,
    broadcast_to,
    concat,
    cross_entropy_logits,
    div,
    exp,
    gelu,
    get_dtype,
    getitem,
    l2_normalize,
    layer_norm,
    linear,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    no_grad,
    precision,
    reshape,
    scaled_dot_attention,
    set_dtype,
    softmax,
    stop_gradient,
    sub,
    tanh,
    transpose,
    tsum,
)

__all__ = [
    "DTYPES", "GROUPS", "OptimizerState", "Parameter", "Tensor", "add", "adamw_step",
    "as_tensor", "broadcast_to", "concat", "cross_entropy_logits", "div", "exp", "gelu",
    "get_dtype", "getitem", "grad_check", "l2_normalize", "layer_norm", "linear", "log",
    "log_softmax", "matmul", "mean", "mul", "no_grad", "precision", "reshape", "scaled_dot_attention",
    "set_dtype", "softmax", "stop_gradient", "sub", "tanh", "transpose", "tsum", "zero_grad",
]
