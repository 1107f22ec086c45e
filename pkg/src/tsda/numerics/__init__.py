"""Array arithmetic, differentiable layers, Adam and gradient checking."""
from .autograd import (
    Tensor,
    absolute,
    as_tensor,
    atan2,
    concat,
    cos,
    exp,
    hypot,
    log,
    logsumexp,
    no_grad,
    parameter,
    relu,
    sin,
    softmax,
    sqrt,
)
from .gradcheck import grad_check
from .layers import (
    BlockSpec,
    adaptive_avg_pool1d,
    adaptive_pool_matrix,
    batch_norm,
    conv1d,
    conv_transpose1d,
    init_block,
    max_pool1d,
    nn_block,
)
from .optim import Adam, OptimizerState, ParameterSet, adam_step

__all__ = [
    "Adam",
    "BlockSpec",
    "OptimizerState",
    "ParameterSet",
    "Tensor",
    "absolute",
    "adam_step",
    "adaptive_avg_pool1d",
    "adaptive_pool_matrix",
    "as_tensor",
    "atan2",
    "batch_norm",
    "concat",
    "conv1d",
    "conv_transpose1d",
    "cos",
    "exp",
    "grad_check",
    "hypot",
    "init_block",
    "log",
    "logsumexp",
    "max_pool1d",
    "nn_block",
    "no_grad",
    "parameter",
    "relu",
    "sin",
    "softmax",
    "sqrt",
]
