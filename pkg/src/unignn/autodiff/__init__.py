from .ops import (
    ATTENTION_SLOPE,
    add,
    col_sum,
    concat_cols,
    dropout,
    leaky_relu,
    matmul,
    mul,
    relu,
    row_l2_normalize,
    row_slice,
    scale,
    softmax_cross_entropy,
    sub,
    sum_all,
)
from .optim import AdamState, adam_step
from .segment import SegmentMap, segment_mean, segment_softmax, segment_sum
from .tensor import Tensor, set_debug, zero_grads

__all__ = [
    "ATTENTION_SLOPE", "AdamState", "SegmentMap", "Tensor", "adam_step", "add", "col_sum",
    "concat_cols", "dropout", "leaky_relu", "matmul", "mul", "relu", "row_l2_normalize",
    "row_slice", "scale", "segment_mean", "segment_softmax", "segment_sum", "set_debug",
    "softmax_cross_entropy", "sub", "sum_all", "zero_grads",
]
