from .tensor import (
    ConfigurationError,
    ContractError,
    Graph,
    NumericError,
    ShapeError,
    Tensor,
    add,
    backward,
    div,
    getitem,
    grad_enabled,
    make_op,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    reshape,
    sub,
    sum,
    tensor,
    transpose,
)
from .functional import (
    clip,
    concat,
    conv2d,
    conv_transpose2d,
    depthwise_conv2d,
    exp,
    gelu,
    layer_norm,
    linear,
    log,
    lower_bound,
    pad2d,
    permute_rows,
    relu,
    sigmoid,
    silu,
    softmax,
    softplus,
    square,
    take,
)
from .gradcheck import GradCheckReport, grad_check, grad_check_params, numeric_grad
from .optim import Adam
