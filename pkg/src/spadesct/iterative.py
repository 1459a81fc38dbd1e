"""Penalized-likelihood reconstruction by gradient descent.

The objective is the Poisson negative log-likelihood of the counts (the
constant ``log(y!)`` terms dropped) plus a Huber penalty on central
differences of the image.  Iterates may go negative.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .noisesim import LAMBDA_FLOOR, ScanProtocol
from .radon import RadonOperator


class PLDivergenceError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class PLConfig:
    beta: float = 100.0
    delta: float = 0.05
    max_iter: int = 300
    grad_tol: float = 1e-8
    step0: float = 1.0
    shrink: float = 0.5
    armijo: float = 1e-4
    max_backtracks: int = 40
    init: str = "fbp"

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.init not in ("zero", "fbp"):
            raise ValueError("init must be 'zero' or 'fbp'")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")


def huber(x, delta: float):
    """Huber penalty and its derivative, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    quad = ax < delta
    value = np.where(quad, 0.5 * x * x, delta * ax - 0.5 * delta * delta)
    deriv = np.clip(x, -delta, delta)
    return value, deriv


def _shift_index(n: int):
    i = np.arange(n)
    return np.minimum(i + 1, n - 1), np.maximum(i - 1, 0)


def central_differences(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``f(x+1) - f(x-1)`` along columns and rows, edge values replicated."""
    n0, n1 = f.shape
    up0, dn0 = _shift_index(n0)
    up1, dn1 = _shift_index(n1)
    return f[:, up1] - f[:, dn1], f[up0, :] - f[dn0, :]


def central_differences_adjoint(ux: np.ndarray, uy: np.ndarray) -> np.ndarray:
    n0, n1 = ux.shape
    up0, dn0 = _shift_index(n0)
    up1, dn1 = _shift_index(n1)
    out = np.zeros((n0, n1))
    np.add.at(out, (slice(None), up1), ux)
    np.subtract.at(out, (slice(None), dn1), ux)
    np.add.at(out, up0, uy)
    np.subtract.at(out, dn0, uy)
    return out


def _expected(f, protocol: ScanProtocol, op: RadonOperator) -> np.ndarray:
    # overly long trial steps may overflow; the line search rejects them
    with np.errstate(over="ignore"):
        return np.maximum(protocol.source_intensity * np.exp(-protocol.scale * op.project(f)), LAMBDA_FLOOR)


def penalty(f: np.ndarray, delta: float) -> float:
    dx, dy = central_differences(f)
    return float(huber(dx, delta)[0].sum() + huber(dy, delta)[0].sum())


def pl_objective(f, y, protocol: ScanProtocol, beta: float, delta: float, op: RadonOperator) -> float:
    """``sum(lambda - y log lambda) + beta * sum huber(Df)``."""
    f = op.geometry.check_image(f)
    lam = _expected(f, protocol, op)
    with np.errstate(invalid="ignore", over="ignore"):
        like = float(np.sum(lam - y * np.log(lam)))
    return like + beta * penalty(f, delta)


def pl_gradient(f, y, protocol: ScanProtocol, beta: float, delta: float, op: RadonOperator) -> np.ndarray:
    f = op.geometry.check_image(f)
    lam = _expected(f, protocol, op)
    grad = protocol.scale * op.backproject(np.asarray(y, dtype=np.float64) - lam)
    if beta:
        dx, dy = central_differences(f)
        grad = grad + beta * central_differences_adjoint(huber(dx, delta)[1], huber(dy, delta)[1])
    return grad


@dataclass
class PLResult:
    image: np.ndarray
    trace: list[float] = field(default_factory=list)
    iterations: int = 0


def pl_reconstruct(y, cfg: PLConfig, protocol: ScanProtocol, op: RadonOperator, init=None) -> PLResult:
    """Gradient descent with Armijo backtracking; the trace is monotone."""
    y = np.asarray(y, dtype=np.float64)
    if init is not None:
        f = np.array(init, dtype=np.float64)
    elif cfg.init == "zero":
        f = np.zeros(op.geometry.image_shape)
    else:
        from .fbp import fbp_reconstruct, ramlak_filter
        from .noisesim import counts_to_sinogram

        f = fbp_reconstruct(counts_to_sinogram(y, protocol), ramlak_filter(op.geometry), op)
    obj = pl_objective(f, y, protocol, cfg.beta, cfg.delta, op)
    trace = [obj]
    if not np.isfinite(obj):
        raise PLDivergenceError("non-finite objective at the initial image", trace)
    step = cfg.step0
    it = 0
    for it in range(1, cfg.max_iter + 1):
        g = pl_gradient(f, y, protocol, cfg.beta, cfg.delta, op)
        gg = float(np.sum(g * g))
        if np.sqrt(gg) <= cfg.grad_tol:
            it -= 1
            break
        t = step
        for _ in range(cfg.max_backtracks):
            cand = f - t * g
            new = pl_objective(cand, y, protocol, cfg.beta, cfg.delta, op)
            if np.isfinite(new) and new <= obj - cfg.armijo * t * gg:
                break
            t *= cfg.shrink
        else:
            it -= 1
            break
        f, obj = cand, new
        trace.append(obj)
        # let the step grow again after an easy acceptance
        step = t / cfg.shrink
    return PLResult(f, trace, it)


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective"])
        for i, v in enumerate(trace):
            w.writerow([i, repr(float(v))])
