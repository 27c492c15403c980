from .optim import Adam, AdamState, optimizer_step
from .special import digamma, lgamma
from .tensor import (
    ShapeError,
    Tape,
    Tensor,
    add,
    as_tensor,
    backward,
    clip,
    concat,
    conv1d,
    div,
    dropout,
    exp,
    getitem,
    global_max_pool,
    lgamma_t,
    linear,
    log,
    log_softmax,
    mean,
    mul,
    neg,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    softplus,
    sub,
)
from .tensor import sum as tsum

__all__ = [
    "Adam", "AdamState", "optimizer_step", "digamma", "lgamma", "ShapeError", "Tape",
    "Tensor", "add", "as_tensor", "backward", "clip", "concat", "conv1d", "div", "dropout",
    "exp", "getitem", "global_max_pool", "lgamma_t", "linear", "log", "log_softmax", "mean",
    "mul", "neg", "relu", "reshape", "scale", "sigmoid", "softmax", "softplus", "sub", "tsum",
]
