"""Poisson photon-count simulation and the ML sinogram estimate."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import DegenerateInputError, Rng

LAMBDA_FLOOR = 1e-12


@dataclass(frozen=True)
class ScanProtocol:
    """Source intensity ``I0`` and the scale applied to ``g`` before
    exponentiation, chosen so the minimal expected count is ``y_min``."""

    source_intensity: float
    min_count_target: float = 60.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.source_intensity > 0:
            raise ValueError("source_intensity must be positive")
        if not 0 < self.min_count_target <= self.source_intensity:
            raise ValueError("need 0 < y_min <= I0")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def to_dict(self) -> dict:
        return {
            "source_intensity": self.source_intensity,
            "min_count_target": self.min_count_target,
            "scale": self.scale,
        }


def calibrate_scale(g, source_intensity: float, min_count: float = 60.0) -> ScanProtocol:
    """Protocol whose scale maps ``max(g)`` to an expected count of ``min_count``.

    ``g`` may be one sinogram or a whole corpus stack; the calibration uses
    the global maximum so train and test share one protocol.
    """
    g = np.asarray(g, dtype=np.float64)
    gmax = float(g.max()) if g.size else 0.0
    if not gmax > 0:
        raise DegenerateInputError("cannot calibrate on an all-zero sinogram")
    if np.any(g < 0):
        raise ValueError("sinogram must be nonnegative")
    scale = math.log(source_intensity / min_count) / gmax
    return ScanProtocol(source_intensity, min_count, scale)


def expected_counts(g, protocol: ScanProtocol) -> np.ndarray:
    return protocol.source_intensity * np.exp(-protocol.scale * np.asarray(g, dtype=np.float64))


def sample_counts(y0, rng: Rng) -> np.ndarray:
    """Independent Poisson draws with means ``y0`` from a single Philox stream."""
    lam = np.maximum(np.asarray(y0, dtype=np.float64), LAMBDA_FLOOR)
    return rng.generator().poisson(lam).astype(np.int64)


def counts_to_sinogram(y, protocol: ScanProtocol) -> np.ndarray:
    """ML line-integral estimate, undoing the protocol scale.  Zero counts
    are clipped to 1 before the log."""
    y = np.maximum(np.asarray(y, dtype=np.float64), 1.0)
    return -np.log(y / protocol.source_intensity) / protocol.scale


def noisy_sinogram(g, protocol: ScanProtocol, rng: Rng) -> np.ndarray:
    """Convenience: expected counts -> Poisson draw -> ML sinogram."""
    return counts_to_sinogram(sample_counts(expected_counts(g, protocol), rng), protocol)
