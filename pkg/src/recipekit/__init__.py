"""Training/inference recipe toolkit: augmentation, metric losses, TTA and ensembling."""

from ._accel import BACKEND, HAS_NUMBA

__version__ = "0.1.0"

__all__ = ["BACKEND", "HAS_NUMBA", "__version__"]
