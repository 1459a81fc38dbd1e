"""Fusion of reconstruction banks for low-dose and region-of-interest CT."""
from .core import DegenerateInputError, RoiSpec, Rng, ScanGeometry, ShapeError
from .radon import RadonOperator

__version__ = "0.1.0"

__all__ = ["DegenerateInputError", "RadonOperator", "Rng", "RoiSpec", "ScanGeometry", "ShapeError"]
