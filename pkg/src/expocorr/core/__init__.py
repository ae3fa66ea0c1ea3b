from . import functional
from .checkpoint import CheckpointError, load_tensors, save_tensors
from .functional import conv2d, upsample_bilinear2x
from .gradcheck import GradientCheckError, finite_diff_check
from .optim import Adam, AdamState, NonFiniteGradientError, adam_update
from .tensor import Tensor, as_tensor, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "CheckpointError",
    "GradientCheckError",
    "NonFiniteGradientError",
    "Tensor",
    "adam_update",
    "as_tensor",
    "conv2d",
    "finite_diff_check",
    "functional",
    "load_tensors",
    "no_grad",
    "save_tensors",
    "upsample_bilinear2x",
]
