"""Minimal reverse-mode tensor engine: tape, primitives, Adam, gradcheck."""

from . import functional, nn, tensor
from .adam import AdamState, adam_step
from .functional import PRIMITIVES, apply_primitive
from .gradcheck import GradCheckReport, finite_difference_check
from .tensor import ShapeError, Tape, Tensor, backward

tensor._attach_functional(functional)

__all__ = [
    "Tensor", "Tape", "ShapeError", "backward",
    "AdamState", "adam_step",
    "apply_primitive", "PRIMITIVES",
    "finite_difference_check", "GradCheckReport",
    "functional", "nn",
]
