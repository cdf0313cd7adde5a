"""Minimal reverse-mode differentiation over dense float64 arrays."""

from cirlab.domain.autodiff.gradcheck import GradientCheckReport, finite_diff_check
from cirlab.domain.autodiff.graph import (
    Node,
    add,
    add_bias,
    backward,
    concat_rows,
    constant,
    log_softmax,
    matmul,
    mean,
    mul,
    normalize_rows,
    parameter,
    pick,
    relu,
    repeat_columns,
    reshape,
    rotate90,
    scale,
    softmax,
    sub,
    sum_sq,
    take_columns,
    total,
    transpose,
)

__all__ = (
    "GradientCheckReport",
    "Node",
    "add",
    "add_bias",
    "backward",
    "concat_rows",
    "constant",
    "finite_diff_check",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "normalize_rows",
    "parameter",
    "pick",
    "relu",
    "repeat_columns",
    "reshape",
    "rotate90",
    "scale",
    "softmax",
    "sub",
    "sum_sq",
    "take_columns",
    "total",
    "transpose",
)
