"""Minimal float64 tensor substrate with reverse-mode differentiation."""
from . import functional
from .gradcheck import GradCheckReport, grad_check
from .tensor import (
    DTYPE,
    GraphError,
    NumericError,
    Parameter,
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    gradient_of,
    grad_enabled,
    no_grad,
)

__all__ = [
    "DTYPE", "GradCheckReport", "GraphError", "NumericError", "Parameter", "ShapeError",
    "Tensor", "as_tensor", "backward", "functional", "grad_check", "gradient_of",
    "grad_enabled", "no_grad",
]
