"""Referring image segmentation at desk scale: synchronous multi-modal
fusion and hierarchical cross-modal aggregation on a self-contained
float64 autodiff engine."""

from .config import RunConfig, VARIANTS
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = ["RunConfig", "VARIANTS", "Tensor", "__version__"]
