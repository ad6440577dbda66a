from . import ops
from .gradcheck import gradient_check
from .ops import (
    add,
    channel_scale,
    concat_channels,
    conv2d,
    fully_connected,
    mean,
    mul,
    pool2d,
    relu,
    reshape,
    resize_nearest,
    sigmoid,
    slice_channels,
    square,
    sub,
)
from .tensor import ContractError, DimensionError, Tape, Tensor, active_tape, backward

__all__ = [
    "ContractError", "DimensionError", "Tape", "Tensor", "active_tape", "add", "backward",
    "channel_scale", "concat_channels", "conv2d", "fully_connected", "gradient_check", "mean",
    "mul", "ops", "pool2d", "relu", "reshape", "resize_nearest", "sigmoid", "slice_channels",
    "square", "sub",
]
