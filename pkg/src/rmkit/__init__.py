"""Purity estimation from randomized measurements with importance-sampled local unitaries."""

__version__ = "0.1.0"

from .states import DenseState, ResourceLimitError, purity  # noqa: E402
from .unitaries import UnitaryAngles  # noqa: E402

__all__ = ["DenseState", "ResourceLimitError", "UnitaryAngles", "purity", "__version__"]
