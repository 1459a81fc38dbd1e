"""Pointwise neural-network fusion of preliminary reconstructions (SPADES).

A single hidden layer with the soft-sign activation ``z / (1 + |z|)`` maps a
feature vector built at pixel ``p`` to a correction added to the best
linear estimate ``fbar(p)``.  Features are

* ``f_i(p) - fbar(p)`` for every preliminary estimate ``i``, then
* ``fbar`` sampled on a small neighborhood of ``p`` (edge-clamped).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .core import Rng


class TrainingError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ConfigurationError(ValueError):
    """A network is applied to estimators it was not trained with."""


def square_neighborhood(radius: int = 1, include_center: bool = True) -> tuple[tuple[int, int], ...]:
    offs = [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]
    if not include_center:
        offs.remove((0, 0))
    return tuple(offs)


@dataclass(frozen=True)
class FeatureLayout:
    n_estimates: int
    best_index: int
    neighborhood: tuple[tuple[int, int], ...] = field(default_factory=square_neighborhood)

    def __post_init__(self):
        if not 0 <= self.best_index < self.n_estimates:
            raise ValueError("best_index out of range")

    @property
    def n_features(self) -> int:
        return self.n_estimates + len(self.neighborhood)

    def to_dict(self) -> dict:
        return {
            "n_estimates": self.n_estimates,
            "best_index": self.best_index,
            "neighborhood": [list(o) for o in self.neighborhood],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureLayout":
        return cls(int(d["n_estimates"]), int(d["best_index"]), tuple(tuple(int(v) for v in o) for o in d["neighborhood"]))


def feature_matrix(estimates, layout: FeatureLayout, pixels=None) -> np.ndarray:
    """Feature vectors ``(M, K)`` for the pixels selected by ``pixels``.

    ``pixels`` is a boolean image mask, an ``(M, 2)`` array of ``(row, col)``
    indices, or ``None`` for every pixel in row-major order.
    """
    est = np.asarray(estimates, dtype=np.float64)
    if est.shape[0] != layout.n_estimates:
        raise ConfigurationError(f"layout expects {layout.n_estimates} estimates, got {est.shape[0]}")
    n_rows, n_cols = est.shape[1:]
    if pixels is None:
        rows, cols = np.divmod(np.arange(n_rows * n_cols), n_cols)
    else:
        pixels = np.asarray(pixels)
        if pixels.dtype == bool:
            rows, cols = np.nonzero(pixels)
        else:
            rows, cols = pixels[:, 0], pixels[:, 1]
    fbar = est[layout.best_index]
    rel = est[:, rows, cols] - fbar[rows, cols][None, :]
    pad = max([0] + [max(abs(dy), abs(dx)) for dy, dx in layout.neighborhood])
    padded = np.pad(fbar, pad, mode="edge")
    nbr = np.stack([padded[rows + pad + dy, cols + pad + dx] for dy, dx in layout.neighborhood])
    return np.concatenate([rel, nbr], axis=0).T


def extract_features(estimates, best_index: int, layout: FeatureLayout, p: tuple[int, int]) -> np.ndarray:
    if best_index != layout.best_index:
        raise ConfigurationError("best_index does not match the layout")
    n = np.asarray(estimates).shape[1:]
    if not (0 <= p[0] < n[0] and 0 <= p[1] < n[1]):
        raise IndexError(f"pixel {p} outside the image")
    return feature_matrix(estimates, layout, np.array([p]))[0]


@dataclass(frozen=True)
class Normalization:
    """Affine map of features onto ``[0, 1]``; targets are only scaled
    (``t / target_scale``) so that a zero network output stays zero."""

    feature_min: np.ndarray
    feature_range: np.ndarray
    target_scale: float

    @classmethod
    def fit(cls, x: np.ndarray, t: np.ndarray) -> "Normalization":
        lo = x.min(axis=0)
        rng = x.max(axis=0) - lo
        rng = np.where(rng > 0, rng, 1.0)
        scale = float(np.max(np.abs(t))) if t.size else 1.0
        return cls(lo, rng, scale if scale > 0 else 1.0)

    def features(self, x):
        return (x - self.feature_min) / self.feature_range

    def features_inverse(self, xn):
        return xn * self.feature_range + self.feature_min

    def targets(self, t):
        return t / self.target_scale

    def targets_inverse(self, tn):
        return tn * self.target_scale


@dataclass
class FusionNet:
    """Hidden weights ``w`` of shape ``(K+1, N)`` (last row is the bias)
    and output weights ``v`` of shape ``(N,)``."""

    w: np.ndarray
    v: np.ndarray
    normalization: Normalization | None = None
    layout: FeatureLayout | None = None
    tags: tuple[str, ...] = ()
    traces: list[list[float]] = field(default_factory=list)

    @property
    def n_inputs(self) -> int:
        return self.w.shape[0] - 1

    @property
    def n_neurons(self) -> int:
        return self.w.shape[1]

    def params(self) -> np.ndarray:
        return np.concatenate([self.w.ravel(), self.v])

    def with_params(self, theta: np.ndarray) -> "FusionNet":
        k1, n = self.w.shape
        return FusionNet(theta[: k1 * n].reshape(k1, n).copy(), theta[k1 * n :].copy(), self.normalization, self.layout, self.tags)

    def predict(self, x_raw: np.ndarray) -> np.ndarray:
        """Raw features in, raw corrections out."""
        if self.normalization is None:
            return nn_forward(self, x_raw)
        y = nn_forward(self, self.normalization.features(x_raw))
        return self.normalization.targets_inverse(y)


def softsign(z):
    return z / (1.0 + np.abs(z))


def nn_forward(net: FusionNet, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None] if single else x
    if xb.shape[1] != net.n_inputs:
        raise ValueError(f"expected {net.n_inputs} features, got {xb.shape[1]}")
    y = softsign(xb @ net.w[:-1] + net.w[-1]) @ net.v
    return float(y[0]) if single else y


@dataclass
class TrainingBatch:
    features: np.ndarray
    targets: np.ndarray
    normalization: Normalization = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if not np.all(np.isfinite(self.targets)):
            raise ValueError("targets must be finite")
        if self.normalization is None:
            self.normalization = Normalization.fit(self.features, self.targets)

    def __len__(self):
        return len(self.targets)

    @staticmethod
    def concat(batches: Sequence["TrainingBatch"]) -> "TrainingBatch":
        return TrainingBatch(np.concatenate([b.features for b in batches]), np.concatenate([b.targets for b in batches]))


def _objective_and_grad(theta, x, t, k1, n):
    w = theta[: k1 * n].reshape(k1, n)
    v = theta[k1 * n :]
    z = x @ w[:-1] + w[-1]
    a = 1.0 + np.abs(z)
    s = z / a
    r = s @ v - t
    obj = float(r @ r)
    gv = 2.0 * (s.T @ r)
    dz = (2.0 * r)[:, None] * v[None, :] / (a * a)
    gw = np.vstack([x.T @ dz, dz.sum(axis=0)[None, :]])
    return obj, np.concatenate([gw.ravel(), gv])


def nn_objective(net: FusionNet, x, t) -> float:
    return _objective_and_grad(net.params(), np.asarray(x, float), np.asarray(t, float), *net.w.shape)[0]


def nn_gradient(net: FusionNet, batch: TrainingBatch, normalized: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the squared-error sum with respect to ``(w, v)``.

    Evaluated on the raw batch values unless ``normalized`` is set.
    """
    x, t = batch.features, batch.targets
    if normalized:
        x, t = batch.normalization.features(x), batch.normalization.targets(t)
    _, g = _objective_and_grad(net.params(), x, t, *net.w.shape)
    k1, n = net.w.shape
    return g[: k1 * n].reshape(k1, n), g[k1 * n :]


@dataclass(frozen=True)
class OptimizerConfig:
    restarts: int = 3
    max_iter: int = 500
    gtol: float = 1e-6


def train_net(batch: TrainingBatch, n_neurons: int = 24, cfg: OptimizerConfig = OptimizerConfig(), rng: Rng = Rng(0)) -> FusionNet:
    """Minimize the squared error by L-BFGS with a strong-Wolfe line search;
    the best of ``cfg.restarts`` random initializations is returned."""
    norm = batch.normalization
    x = norm.features(batch.features)
    t = norm.targets(batch.targets)
    n_rows, k = x.shape
    if n_rows < k:
        raise ValueError(f"need at least K={k} training vectors, got {n_rows}")
    k1 = k + 1
    best, traces = None, []
    for r in range(cfg.restarts):
        gen = rng.child(r).generator()
        theta0 = np.concatenate(
            [gen.uniform(-0.5, 0.5, size=k1 * n_neurons) / np.sqrt(k), gen.uniform(-0.5, 0.5, size=n_neurons) / np.sqrt(n_neurons)]
        )
        trace = [_objective_and_grad(theta0, x, t, k1, n_neurons)[0]]

        def record(intermediate_result):
            trace.append(float(intermediate_result.fun))

        res = minimize(
            _objective_and_grad,
            theta0,
            args=(x, t, k1, n_neurons),
            jac=True,
            method="L-BFGS-B",
            callback=record,
            options={"maxiter": cfg.max_iter, "gtol": cfg.gtol, "maxcor": 20},
        )
        if not np.isfinite(res.fun):
            raise TrainingError("non-finite objective during network training", trace)
        traces.append(trace)
        if best is None or res.fun < best[0]:
            best = (res.fun, res.x)
    template = FusionNet(np.zeros((k1, n_neurons)), np.zeros(n_neurons), norm)
    net = template.with_params(best[1])
    net.traces = traces
    return net


def build_training_batch(references, stacks, layout: FeatureLayout, n_samples: int, rng: Rng, mask=None) -> TrainingBatch:
    """Sample ``n_samples`` pixels uniformly (without replacement) from the
    union of all images, restricted to ``mask`` when given."""
    feats, targs = [], []
    candidates = []
    for i, f in enumerate(references):
        m = np.ones(f.shape, bool) if mask is None else np.asarray(mask, bool)
        rows, cols = np.nonzero(m)
        candidates.append(np.column_stack([np.full(len(rows), i), rows, cols]))
    cand = np.concatenate(candidates)
    if n_samples > len(cand):
        warnings.warn(f"requested {n_samples} samples but only {len(cand)} pixels are available", stacklevel=2)
        n_samples = len(cand)
    if n_samples == len(cand):
        pick = cand
    else:
        pick = cand[np.sort(rng.generator().choice(len(cand), size=n_samples, replace=False))]
    for i, f in enumerate(references):
        sel = pick[pick[:, 0] == i, 1:]
        if len(sel) == 0:
            continue
        feats.append(feature_matrix(stacks[i], layout, sel))
        fbar = np.asarray(stacks[i])[layout.best_index]
        targs.append(f[sel[:, 0], sel[:, 1]] - fbar[sel[:, 0], sel[:, 1]])
    return TrainingBatch(np.concatenate(feats), np.concatenate(targs))


def spades_reconstruct(g, bank, net: FusionNet, layout: FeatureLayout | None = None, mask=None) -> np.ndarray:
    """Run every operator in ``bank`` on ``g`` and fuse pointwise.

    Pixels outside ``mask`` (when given) are set to zero.
    """
    tags = tuple(op.tag for op in bank)
    if net.tags and tags != tuple(net.tags):
        raise ConfigurationError("estimator bank does not match the bank the network was trained with")
    layout = layout or net.layout
    stack = np.stack([op(g) for op in bank])
    return spades_fuse(stack, net, layout, mask)


def spades_fuse(stack, net: FusionNet, layout: FeatureLayout, mask=None) -> np.ndarray:
    stack = np.asarray(stack, dtype=np.float64)
    fbar = stack[layout.best_index]
    sel = np.ones(fbar.shape, bool) if mask is None else np.asarray(mask, bool)
    out = np.zeros_like(fbar)
    out[sel] = fbar[sel] + net.predict(feature_matrix(stack, layout, sel))
    return out
