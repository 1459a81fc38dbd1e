"""Geometry, ROI and deterministic randomness shared by every module.

Conventions
-----------
Images are square ``(n, n)`` float64 arrays indexed ``[row, col]``.  Pixel
pitch is 1 and the image center sits at ``((n-1)/2, (n-1)/2)``; the physical
coordinates of pixel ``(row, col)`` are ``x = col - c`` and ``y = row - c``.

Sinograms are ``(n_angles, n_bins)`` float64 arrays.  Angle ``k`` is
``theta_k = k*pi/n_angles`` (half-open ``[0, pi)``) and bin ``j`` sits at
``s_j = -R + j*ds`` with ``ds = 2R/(n_bins-1)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Array dimensions do not match the geometry they are paired with."""


class DegenerateInputError(ValueError):
    """Input carries no information for the requested operation."""


@dataclass(frozen=True)
class ScanGeometry:
    """Parallel-beam sampling tying the image grid to the sinogram grid."""

    n_angles: int
    n_bins: int
    image_size: int
    support_radius: float | None = None

    def __post_init__(self):
        if self.n_angles < 1 or self.n_bins < 1:
            raise ValueError("n_angles and n_bins must be >= 1")
        if self.image_size < 2:
            raise ValueError("image_size must be >= 2")
        if self.support_radius is None:
            object.__setattr__(self, "support_radius", self.image_size / 2.0)
        if not self.support_radius > 0:
            raise ValueError("support_radius must be positive")

    @property
    def bin_spacing(self) -> float:
        if self.n_bins == 1:
            return 2.0 * self.support_radius
        return 2.0 * self.support_radius / (self.n_bins - 1)

    @property
    def angles(self) -> np.ndarray:
        return np.arange(self.n_angles) * (np.pi / self.n_angles)

    @property
    def bins(self) -> np.ndarray:
        if self.n_bins == 1:
            return np.zeros(1)
        return -self.support_radius + np.arange(self.n_bins) * self.bin_spacing

    @property
    def image_shape(self) -> tuple[int, int]:
        return (self.image_size, self.image_size)

    @property
    def sinogram_shape(self) -> tuple[int, int]:
        return (self.n_angles, self.n_bins)

    def pixel_coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical ``(x, y)`` of every pixel center, each of image shape."""
        c = (self.image_size - 1) / 2.0
        idx = np.arange(self.image_size) - c
        y, x = np.meshgrid(idx, idx, indexing="ij")
        return x, y

    def check_image(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=np.float64)
        if f.shape[-2:] != self.image_shape:
            raise ShapeError(f"image shape {f.shape} does not match {self.image_shape}")
        return f

    def check_sinogram(self, g: np.ndarray) -> np.ndarray:
        g = np.asarray(g, dtype=np.float64)
        if g.shape[-2:] != self.sinogram_shape:
            raise ShapeError(f"sinogram shape {g.shape} does not match {self.sinogram_shape}")
        return g

    def to_dict(self) -> dict:
        return {
            "n_angles": self.n_angles,
            "n_bins": self.n_bins,
            "image_size": self.image_size,
            "support_radius": self.support_radius,
        }


@dataclass(frozen=True)
class RoiSpec:
    """Centered disk ROI of radius ``roi_radius``, measured through a disk of
    radius ``measurement_radius`` (defaults to ``1.1 * roi_radius``)."""

    roi_radius: float
    measurement_radius: float | None = None

    def __post_init__(self):
        if self.measurement_radius is None:
            object.__setattr__(self, "measurement_radius", 1.1 * self.roi_radius)
        if self.roi_radius < 0 or self.measurement_radius < self.roi_radius:
            raise ValueError("need 0 <= roi_radius <= measurement_radius")

    def validate(self, geometry: ScanGeometry) -> None:
        if self.measurement_radius > geometry.support_radius + 1e-12:
            raise ValueError("measurement_radius exceeds the support radius")

    def to_dict(self) -> dict:
        return {"roi_radius": self.roi_radius, "measurement_radius": self.measurement_radius}


def line_coordinates(angle_index: int, bin_index: int, geometry: ScanGeometry) -> tuple[float, float]:
    """Return ``(theta, s)`` of the line sampled by ``(angle_index, bin_index)``."""
    if not 0 <= angle_index < geometry.n_angles:
        raise IndexError(f"angle index {angle_index} out of range")
    if not 0 <= bin_index < geometry.n_bins:
        raise IndexError(f"bin index {bin_index} out of range")
    theta = angle_index * math.pi / geometry.n_angles
    if geometry.n_bins == 1:
        return theta, 0.0
    s = -geometry.support_radius + bin_index * geometry.bin_spacing
    return theta, s


def roi_pixel_mask(roi: RoiSpec, geometry: ScanGeometry) -> np.ndarray:
    """Boolean image, true where the pixel center lies within ``roi_radius``.

    The pixels nearest the center are always included, so a radius below the
    half pixel diagonal still selects the central pixel(s).
    """
    x, y = geometry.pixel_coordinates()
    r = np.hypot(x, y)
    return r <= max(roi.roi_radius, r.min())


def support_mask(geometry: ScanGeometry) -> np.ndarray:
    x, y = geometry.pixel_coordinates()
    return np.hypot(x, y) <= geometry.support_radius


@dataclass(frozen=True)
class Rng:
    """Counter-based deterministic random source.

    Streams are Philox generators keyed by ``(seed, *stream)``; a child
    stream is addressed by its key path, so results never depend on the
    order in which sibling streams are consumed.
    """

    seed: int
    stream: tuple[int, ...] = field(default=())

    def child(self, *keys: int) -> "Rng":
        return Rng(self.seed, self.stream + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=self.stream)
        return np.random.Generator(np.random.Philox(ss))
