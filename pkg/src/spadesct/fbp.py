"""Filtered back-projection with Ram-Lak and Butterworth-apodized filters."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import DegenerateInputError, ScanGeometry
from .radon import RadonOperator


def padded_length(n_bins: int) -> int:
    """Twice the next power of two, enough to make the filtering linear."""
    return 2 * (1 << max(0, int(n_bins - 1).bit_length()))


@dataclass(frozen=True)
class ProjectionFilter1D:
    """Frequency response on the zero-padded FFT grid (numpy ``fft`` order,
    frequencies in cycles per bin)."""

    response: np.ndarray
    n_bins: int
    tag: str

    @property
    def frequencies(self) -> np.ndarray:
        return np.fft.fftfreq(len(self.response))

    def apply(self, g: np.ndarray) -> np.ndarray:
        """Filter every projection (last axis) of ``g``."""
        g = np.asarray(g, dtype=np.float64)
        if g.shape[-1] != self.n_bins:
            raise ValueError(f"filter built for {self.n_bins} bins, got {g.shape[-1]}")
        n = len(self.response)
        spec = np.fft.rfft(g, n=n, axis=-1) * self.response[: n // 2 + 1]
        return np.fft.irfft(spec, n=n, axis=-1)[..., : self.n_bins]

    def spatial_kernel(self) -> np.ndarray:
        """Centered spatial taps for lags ``-(n_bins-1) .. n_bins-1``."""
        h = np.real(np.fft.ifft(self.response))
        lags = np.arange(-(self.n_bins - 1), self.n_bins)
        return h[lags % len(h)]


def ramlak_filter(geometry: ScanGeometry) -> ProjectionFilter1D:
    n = padded_length(geometry.n_bins)
    return ProjectionFilter1D(np.abs(np.fft.fftfreq(n)), geometry.n_bins, "ram-lak")


def butterworth_window(freq: np.ndarray, p: float, q: float) -> np.ndarray:
    """``1 / (1 + (|w|/w_c)^(2p))`` with cutoff ``w_c = q * Nyquist``."""
    if not (p > 0 and q > 0):
        raise ValueError("p and q must be positive")
    wc = 0.5 * q
    return 1.0 / (1.0 + (np.abs(freq) / wc) ** (2.0 * p))


def butterworth_apodize(base: ProjectionFilter1D, p: float, q: float) -> ProjectionFilter1D:
    window = butterworth_window(base.frequencies, p, q)
    return ProjectionFilter1D(base.response * window, base.n_bins, f"{base.tag}|bw(p={p:g},q={q:g})")


@dataclass(frozen=True)
class CutoffSchedule:
    """Butterworth parameters ``(p, q_i)``; cutoffs must be strictly monotone
    so that blur changes monotonically along the sequence."""

    p: float
    qs: tuple[float, ...]

    def __post_init__(self):
        qs = np.asarray(self.qs, dtype=float)
        if len(qs) == 0:
            raise ValueError("schedule must be nonempty")
        d = np.diff(qs)
        if len(d) and not (np.all(d > 0) or np.all(d < 0)):
            raise ValueError("cutoffs must be strictly monotone")

    @classmethod
    def geometric(cls, p: float, q_first: float, q_last: float, count: int) -> "CutoffSchedule":
        if count == 1:
            return cls(p, (float(q_first),))
        return cls(p, tuple(float(q) for q in np.geomspace(q_first, q_last, count)))

    def filters(self, geometry: ScanGeometry) -> list[ProjectionFilter1D]:
        base = ramlak_filter(geometry)
        return [butterworth_apodize(base, self.p, q) for q in self.qs]


def fbp_reconstruct(g: np.ndarray, filt: ProjectionFilter1D, op: RadonOperator) -> np.ndarray:
    """``(pi / n_angles) * R*(filter(g))``; works on stacks of sinograms."""
    g = op.geometry.check_sinogram(g)
    return op.backproject(filt.apply(g)) * (np.pi / op.geometry.n_angles)


def fbp_sequence(g: np.ndarray, schedule: CutoffSchedule, op: RadonOperator) -> list[np.ndarray]:
    return [fbp_reconstruct(g, f, op) for f in schedule.filters(op.geometry)]


def measured_band(geometry: ScanGeometry, measurement_radius: float) -> tuple[int, int]:
    """Inclusive bin index range with ``|s| <= measurement_radius``."""
    idx = np.flatnonzero(np.abs(geometry.bins) <= measurement_radius + 1e-9)
    if idx.size == 0:
        mid = (geometry.n_bins - 1) // 2
        return mid, mid
    return int(idx[0]), int(idx[-1])


def complete_sinogram(g_truncated: np.ndarray, band: tuple[int, int]) -> np.ndarray:
    """Replace bins outside ``band`` by the nearest band edge bin of the same angle."""
    lo, hi = band
    g = np.asarray(g_truncated, dtype=np.float64)
    if hi < lo or lo < 0 or hi >= g.shape[-1]:
        raise DegenerateInputError(f"invalid measured band {band}")
    out = g.copy()
    out[..., :lo] = g[..., lo : lo + 1]
    out[..., hi + 1 :] = g[..., hi : hi + 1]
    return out


class FBPReconstructor:
    """Named FBP operator, optionally preceded by sinogram completion."""

    def __init__(self, op: RadonOperator, filt: ProjectionFilter1D, completion_band: tuple[int, int] | None = None):
        self.op = op
        self.filter = filt
        self.completion_band = completion_band
        self.tag = "fbp:" + filt.tag + ("" if completion_band is None else f"|complete{tuple(completion_band)}")

    def __call__(self, g: np.ndarray) -> np.ndarray:
        if self.completion_band is not None:
            g = complete_sinogram(g, self.completion_band)
        return fbp_reconstruct(g, self.filter, self.op)


def write_filter_csv(filt: ProjectionFilter1D, path) -> None:
    freq = filt.frequencies
    order = np.argsort(freq)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frequency", "gain"])
        for i in order:
            w.writerow([f"{freq[i]:.10g}", f"{filt.response[i]:.10g}"])
