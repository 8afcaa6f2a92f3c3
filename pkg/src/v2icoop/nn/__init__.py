"""Small reverse-mode autodiff over numpy, float64, NHWC feature maps."""

from . import ops
from .gradcheck import check_params, finite_difference_check
from .optim import Adam, OptimizerError
from .tensor import NonFiniteError, ShapeError, Tape, Tensor, active_tape

__all__ = [
    "Adam",
    "NonFiniteError",
    "OptimizerError",
    "ShapeError",
    "Tape",
    "Tensor",
    "active_tape",
    "check_params",
    "finite_difference_check",
    "ops",
]
