"""Confidence-interval switch fusion of estimates with growing blur.

Given estimates ``f_1 .. f_I`` ordered by increasing blur and bounds
``rho_i`` on their stochastic error, every pixel takes the estimate of the
largest index ``i+`` for which the intervals ``[f_i - 2 rho_i, f_i + 2 rho_i]``,
``i <= i+``, still share a common point.

Switch indices are 0-based throughout.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .core import Rng
from .noisesim import ScanProtocol, noisy_sinogram
from .radon import RadonOperator

DEFAULT_KAPPAS = (0.25, 0.5, 1.0, 2.0, 4.0)
DEFAULT_QS = (0.5, 1.0, 1.5, 2.0)


@dataclass(frozen=True)
class VarianceMaps:
    """Pixelwise noise variance ``(I, n, n)`` of every estimator."""

    maps: np.ndarray
    n_instances: int

    def __post_init__(self):
        if self.n_instances < 2:
            raise ValueError("variance maps need at least 2 instances")
        if np.any(self.maps < 0):
            raise ValueError("variances must be nonnegative")

    @staticmethod
    def average(items: Sequence["VarianceMaps"]) -> "VarianceMaps":
        return VarianceMaps(
            np.mean([m.maps for m in items], axis=0),
            int(min(m.n_instances for m in items)),
        )


@dataclass(frozen=True)
class ConfidenceParams:
    kappa: float
    q: float

    def __post_init__(self):
        if not (self.kappa > 0 and self.q > 0):
            raise ValueError("kappa and q must be positive")


def estimate_variance_maps(
    f: np.ndarray,
    estimators: Sequence[Callable[[np.ndarray], np.ndarray]],
    protocol: ScanProtocol,
    n_instances: int,
    rng: Rng,
    op: RadonOperator,
) -> VarianceMaps:
    """Unbiased sample variance of ``T_i(g_j)`` over ``n_instances`` noisy scans of ``f``.

    Estimators must accept a stack of sinograms.
    """
    if n_instances < 2:
        raise ValueError("n_instances must be >= 2")
    g = op.project(f)
    noisy = np.stack([noisy_sinogram(g, protocol, rng.child(j)) for j in range(n_instances)])
    maps = np.stack([np.var(est(noisy), axis=0, ddof=1) for est in estimators])
    return VarianceMaps(maps, n_instances)


def stochastic_bounds(maps: VarianceMaps, params: ConfidenceParams) -> np.ndarray:
    """``rho_i(p) = kappa * sqrt(lambda_i(p))**q``."""
    return params.kappa * np.sqrt(maps.maps) ** params.q


def legone_fuse(estimates, bounds) -> tuple[np.ndarray, np.ndarray]:
    """Return the fused image and the 0-based switch map."""
    est = np.asarray(estimates, dtype=np.float64)
    rho = np.asarray(bounds, dtype=np.float64)
    if est.ndim < 1 or est.shape[0] == 0:
        raise ValueError("need at least one estimate")
    if rho.shape != est.shape:
        rho = np.broadcast_to(rho, est.shape)
    shape = est.shape[1:]
    flat_e = np.ascontiguousarray(est.reshape(est.shape[0], -1))
    flat_r = np.ascontiguousarray(rho.reshape(rho.shape[0], -1))
    idx = kernels.switch_index(flat_e, flat_r)
    fused = np.take_along_axis(flat_e, idx[None, :], axis=0)[0]
    return fused.reshape(shape), idx.reshape(shape)


def _mean_snr(references, stacks, rho) -> float:
    from .evaluate import snr

    return float(np.mean([snr(f, legone_fuse(st, rho)[0]) for f, st in zip(references, stacks)]))


def select_confidence(references, stacks, maps: VarianceMaps, kappas=DEFAULT_KAPPAS, qs=DEFAULT_QS):
    """Grid search for the ``(kappa, q)`` maximizing mean fused SNR.

    Returns ``(params, table)`` where ``table`` maps each grid point to its
    score.  Ties go to the smaller ``kappa`` then the smaller ``q``.
    """
    grid = sorted(itertools.product(kappas, qs))
    if not grid:
        raise ValueError("empty calibration grid")
    best, best_score, table = None, -np.inf, {}
    for kappa, q in grid:
        params = ConfidenceParams(kappa, q)
        score = _mean_snr(references, stacks, stochastic_bounds(maps, params))
        table[(kappa, q)] = score
        if score > best_score:
            best, best_score = params, score
    return best, table


def calibrate_confidence(
    train_images,
    estimators,
    protocol: ScanProtocol,
    op: RadonOperator,
    rng: Rng,
    kappas=DEFAULT_KAPPAS,
    qs=DEFAULT_QS,
    n_instances: int = 32,
    maps: VarianceMaps | None = None,
) -> tuple[ConfidenceParams, VarianceMaps]:
    """Calibrate ``(kappa, q)`` on a training corpus.

    Variance maps are simulated per training image and averaged over the
    corpus unless ``maps`` is supplied.  One further noisy scan per image
    provides the estimate stacks that are scored.
    """
    if maps is None:
        maps = VarianceMaps.average(
            [
                estimate_variance_maps(f, estimators, protocol, n_instances, rng.child(0, i), op)
                for i, f in enumerate(train_images)
            ]
        )
    stacks = []
    for i, f in enumerate(train_images):
        g = noisy_sinogram(op.project(f), protocol, rng.child(1, i))
        stacks.append(np.stack([est(g) for est in estimators]))
    params, _ = select_confidence(train_images, stacks, maps, kappas, qs)
    return params, maps


def legone_denoise_1d(y, radii, noise_sigma: float, z: float = 2.0, return_index: bool = False):
    """Pointwise window-mean selection on a 1-D signal.

    Window ``i`` around sample ``x`` is ``[x - radii[i], x + radii[i]]``
    clipped to the signal; its stochastic bound is ``z*sigma/sqrt(width)``.
    """
    y = np.asarray(y, dtype=np.float64)
    radii = np.asarray(radii, dtype=np.int64)
    if np.any(np.diff(radii) <= 0):
        raise ValueError("radii must be strictly increasing")
    n = len(y)
    csum = np.concatenate([[0.0], np.cumsum(y)])
    pos = np.arange(n)
    est = np.empty((len(radii), n))
    rho = np.empty((len(radii), n))
    for i, r in enumerate(radii):
        lo = np.clip(pos - r, 0, n)
        hi = np.clip(pos + r + 1, 0, n)
        width = hi - lo
        est[i] = (csum[hi] - csum[lo]) / width
        rho[i] = z * noise_sigma / np.sqrt(width)
    fused, idx = legone_fuse(est, rho)
    if return_index:
        return fused, idx, est, rho
    return fused
