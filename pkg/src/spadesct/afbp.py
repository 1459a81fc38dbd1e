"""Adaptive filtered back-projection (AFBP).

The operator is ``F_image o R* o F_sino``:

* ``F_sino`` convolves the sinogram with one 2-D kernel per distance
  segment ``D_i`` of ``|s|``; the kernel reads the whole sinogram but only
  writes bins whose ``|s|`` falls in its segment.  Bins with ``s < 0`` use
  the kernel mirrored along the bin axis.  The angle axis wraps around with
  ``g(theta + pi, s) = g(theta, -s)``; the bin axis is zero-padded.
* ``R*`` is the back-projector scaled by ``pi / n_angles``;
* ``F_image`` is a zero-padded 2-D convolution.

Training fits the kernels by alternating least squares: with one set fixed
the objective is quadratic in the other, and the normal equations are
solved by conjugate gradients.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import fftconvolve

from .core import RoiSpec, ScanGeometry, roi_pixel_mask
from .fbp import ProjectionFilter1D, measured_band, ramlak_filter
from .radon import RadonOperator


class TrainingError(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


# ------------------------------------------------------------------ kernel bank

@dataclass
class KernelBank:
    """Trained AFBP parameters bound to one geometry and ROI.

    ``segments`` is a ``(d, 2)`` array of ``[lo, hi)`` ranges of ``|s|``;
    the last segment is closed at ``D``.  ``sino_kernels`` is ``(d, A, B)``
    with odd ``A`` and ``B``; ``image_kernel`` is ``(m, m)`` with odd ``m``.
    """

    geometry: ScanGeometry
    roi: RoiSpec
    segments: np.ndarray
    sino_kernels: np.ndarray
    image_kernel: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.segments = np.asarray(self.segments, dtype=np.float64)
        self.sino_kernels = np.asarray(self.sino_kernels, dtype=np.float64)
        self.image_kernel = np.asarray(self.image_kernel, dtype=np.float64)
        d, a, b = self.sino_kernels.shape
        if self.segments.shape != (d, 2):
            raise ValueError("one segment per sinogram kernel required")
        if a % 2 == 0 or b % 2 == 0:
            raise ValueError("sinogram kernel dimensions must be odd")
        m = self.image_kernel.shape
        if m[0] != m[1] or m[0] % 2 == 0:
            raise ValueError("image kernel must be square with odd size")
        if not np.isclose(self.segments[0, 0], 0) or np.any(self.segments[1:, 0] != self.segments[:-1, 1]):
            raise ValueError("segments must be contiguous from 0")

    @property
    def n_segments(self) -> int:
        return self.sino_kernels.shape[0]

    @property
    def radius(self) -> float:
        return float(self.segments[-1, 1])

    @property
    def tag(self) -> str:
        h = hashlib.sha256()
        h.update(self.sino_kernels.astype("<f8").tobytes())
        h.update(self.image_kernel.astype("<f8").tobytes())
        h.update(self.segments.astype("<f8").tobytes())
        return "afbp:" + h.hexdigest()[:16]

    def copy(self) -> "KernelBank":
        return KernelBank(self.geometry, self.roi, self.segments.copy(), self.sino_kernels.copy(), self.image_kernel.copy(), dict(self.meta))

    def bin_segments(self) -> np.ndarray:
        """Segment index of every bin, ``-1`` for bins beyond ``D``."""
        s = np.abs(self.geometry.bins)
        d = self.n_segments
        seg = np.full(len(s), -1, dtype=np.int64)
        for i, (lo, hi) in enumerate(self.segments):
            if i == d - 1:
                sel = (s >= lo) & (s <= hi + 1e-9)
            else:
                sel = (s >= lo) & (s < hi)
            seg[sel] = i
        return seg


def equal_segments(radius: float, d: int) -> np.ndarray:
    edges = np.linspace(0.0, radius, d + 1)
    return np.column_stack([edges[:-1], edges[1:]])


def default_bin_extent(geometry: ScanGeometry, roi: RoiSpec) -> int:
    lo, hi = measured_band(geometry, roi.measurement_radius)
    width = hi - lo + 1
    return width if width % 2 else width + 1


def default_image_kernel_size(geometry: ScanGeometry) -> int:
    m = int(math.isqrt(geometry.image_size))
    return m if m % 2 else m + 1


def init_bank(
    geometry: ScanGeometry,
    roi: RoiSpec,
    n_segments: int = 5,
    angle_extent: int = 5,
    bin_extent: int | None = None,
    image_kernel_size: int | None = None,
    base_filter: ProjectionFilter1D | None = None,
    radius: float | None = None,
) -> KernelBank:
    """FBP-equivalent starting point: the (apodized) ramp's spatial taps in
    the central angle row of every segment kernel and a delta image kernel."""
    if bin_extent is None:
        bin_extent = default_bin_extent(geometry, roi)
    if image_kernel_size is None:
        image_kernel_size = default_image_kernel_size(geometry)
    if base_filter is None:
        base_filter = ramlak_filter(geometry)
    if radius is None:
        radius = roi.measurement_radius
    taps = base_filter.spatial_kernel()  # lags -(n_bins-1) .. n_bins-1
    center = geometry.n_bins - 1
    hb = bin_extent // 2
    col = np.zeros(bin_extent)
    for b in range(-hb, hb + 1):
        if abs(b) <= center:
            col[b + hb] = taps[center + b]
    kern = np.zeros((n_segments, angle_extent, bin_extent))
    kern[:, angle_extent // 2, :] = col
    img = np.zeros((image_kernel_size, image_kernel_size))
    img[image_kernel_size // 2, image_kernel_size // 2] = 1.0
    return KernelBank(geometry, roi, equal_segments(radius, n_segments), kern, img)


# ------------------------------------------------------------- forward operator

def wrap_pad_sinogram(g: np.ndarray, angle_pad: int, bin_pad: int) -> np.ndarray:
    """Extend the angle axis periodically (with bin reversal per half turn)
    and zero-pad the bin axis."""
    n_angles, n_bins = g.shape
    k = np.arange(-angle_pad, n_angles + angle_pad)
    turns = np.floor_divide(k, n_angles)
    rows = g[np.mod(k, n_angles)]
    flip = (turns % 2) != 0
    rows[flip] = rows[flip][:, ::-1]
    return np.pad(rows, ((0, 0), (bin_pad, bin_pad)))


class _SegmentLayout:
    """Which sinogram entries each segment writes, and their patch rows."""

    def __init__(self, bank: KernelBank):
        geo = bank.geometry
        self.shape = bank.sino_kernels.shape[1:]
        seg = bank.bin_segments()
        self.rows = []
        self.negative = []
        for i in range(bank.n_segments):
            bins = np.flatnonzero(seg == i)
            k, j = np.meshgrid(np.arange(geo.n_angles), bins, indexing="ij")
            self.rows.append((k.ravel(), j.ravel()))
            self.negative.append(geo.bins[j.ravel()] < 0)

    def patches(self, g: np.ndarray, i: int) -> np.ndarray:
        """``(n_rows_i, A*B)`` design rows so that ``h = patches @ kernel.ravel()``."""
        a, b = self.shape
        padded = wrap_pad_sinogram(g, a // 2, b // 2)
        win = sliding_window_view(padded, (a, b))
        k, j = self.rows[i]
        out = win[k, j][:, ::-1, :].copy()
        pos = ~self.negative[i]
        out[pos] = out[pos][:, :, ::-1]
        return out.reshape(len(k), a * b)


def filter_sinogram(g: np.ndarray, bank: KernelBank, layout: _SegmentLayout | None = None) -> np.ndarray:
    g = bank.geometry.check_sinogram(g)
    if g.ndim == 3:
        return np.stack([filter_sinogram(x, bank, layout) for x in g])
    layout = layout or _SegmentLayout(bank)
    h = np.zeros_like(g)
    for i in range(bank.n_segments):
        k, j = layout.rows[i]
        if len(k):
            h[k, j] = layout.patches(g, i) @ bank.sino_kernels[i].ravel()
    return h


def image_convolve(u: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    if kernel.size == 1:
        return u * kernel.ravel()[0]
    if u.ndim == 3:
        return np.stack([image_convolve(x, kernel) for x in u])
    return fftconvolve(u, kernel, mode="same")


def apply_afbp(g: np.ndarray, bank: KernelBank, op: RadonOperator, layout: _SegmentLayout | None = None) -> np.ndarray:
    if op.geometry != bank.geometry:
        raise ValueError("kernel bank was trained for a different geometry")
    h = filter_sinogram(g, bank, layout)
    u = op.backproject(h) * (np.pi / bank.geometry.n_angles)
    return image_convolve(u, bank.image_kernel)


class AFBPReconstructor:
    def __init__(self, bank: KernelBank, op: RadonOperator, truncate: bool = True):
        self.bank = bank
        self.op = op
        self.truncate = truncate
        self.tag = bank.tag
        self._layout = _SegmentLayout(bank)

    def __call__(self, g: np.ndarray) -> np.ndarray:
        if self.truncate:
            g = truncate_projections(g, self.bank.roi, self.bank.geometry)
        return apply_afbp(g, self.bank, self.op, self._layout)


# ------------------------------------------------------------------ ROI helpers

def truncate_projections(g: np.ndarray, roi: RoiSpec, geometry: ScanGeometry) -> np.ndarray:
    """Zero every bin with ``|s| > measurement_radius``."""
    g = geometry.check_sinogram(g)
    keep = np.abs(geometry.bins) <= roi.measurement_radius + 1e-9
    if not keep.any():
        keep[(geometry.n_bins - 1) // 2] = True
    return g * keep


def mask_roi(f: np.ndarray, roi: RoiSpec, geometry: ScanGeometry) -> np.ndarray:
    return geometry.check_image(f) * roi_pixel_mask(roi, geometry)


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized rotationally symmetric Gaussian truncated at ``ceil(4 sigma)``."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return np.ones((1, 1))
    r = int(math.ceil(4.0 * sigma))
    x = np.arange(-r, r + 1)
    g = np.exp(-(x[:, None] ** 2 + x[None, :] ** 2) / (2.0 * sigma * sigma))
    return g / g.sum()


def gaussian_blur(f: np.ndarray, sigma: float) -> np.ndarray:
    return image_convolve(np.asarray(f, dtype=np.float64), gaussian_kernel(sigma))


# ------------------------------------------------------------------ blur measure

def _golden_section(fun, a: float, c: float, tol: float = 1e-4) -> float:
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    x1, x2 = c - inv * (c - a), a + inv * (c - a)
    f1, f2 = fun(x1), fun(x2)
    while c - a > tol:
        if f1 < f2:
            c, x2, f2 = x2, x1, f1
            x1 = c - inv * (c - a)
            f1 = fun(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + inv * (c - a)
            f2 = fun(x2)
    return 0.5 * (a + c)


def blur_distance(pairs, sigma: float, mask=None) -> float:
    """Mean over pairs of ``||X R f - G_sigma * f||_2`` (on ``mask``)."""
    total = 0.0
    for out, f in pairs:
        diff = np.asarray(out) - gaussian_blur(f, sigma)
        if mask is not None:
            diff = diff[mask]
        total += float(np.linalg.norm(diff))
    return total / len(pairs)


def blur_measure(pairs, mask=None, sigma_grid=None) -> float:
    """Std-dev of the Gaussian whose action best matches ``X R`` on the pairs.

    A coarse grid search is refined by golden-section search between the
    neighbors of the best grid point.  The default grid has step 0.25 up to
    6 and step 0.5 beyond, up to a quarter of the image size.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("blur_measure needs at least one pair")
    if sigma_grid is None:
        top = max(6.0, np.asarray(pairs[0][1]).shape[-1] / 4.0)
        grid = np.concatenate([np.arange(0.0, 6.0, 0.25), np.arange(6.0, top + 1e-9, 0.5)])
    else:
        grid = np.asarray(sigma_grid, float)
    vals = [blur_distance(pairs, s, mask) for s in grid]
    k = int(np.argmin(vals))
    a = grid[max(k - 1, 0)]
    c = grid[min(k + 1, len(grid) - 1)]
    if a == c:
        return float(grid[k])
    best = _golden_section(lambda s: blur_distance(pairs, s, mask), a, c)
    if blur_distance(pairs, best, mask) > vals[k]:
        return float(grid[k])
    return float(best)


# ----------------------------------------------------------------------- training

@dataclass
class TrainingRun:
    """Alternating-CG schedule and the recorded objective after every half-step."""

    objective: str = "quality"
    sigma: float = 0.0
    cg_iters_sino: int = 150
    cg_iters_image: int = 100
    alternations: int = 12
    tol: float = 1e-5
    trace: list[float] = field(default_factory=list)
    steps: list[str] = field(default_factory=list)


def conjugate_gradient(H: np.ndarray, b: np.ndarray, x0: np.ndarray, max_iter: int, rtol: float = 1e-12) -> np.ndarray:
    """Plain CG on the SPD system ``H x = b``, warm-started at ``x0``.

    Stops once ``||b - Hx|| <= rtol * ||b||``.  Every iterate lowers
    ``x'Hx - 2b'x``.
    """
    x = x0.copy()
    r = b - H @ x
    p = r.copy()
    rr = float(r @ r)
    stop = rtol * rtol * max(float(b @ b), 1e-300)
    for _ in range(max_iter):
        if rr <= stop:
            break
        hp = H @ p
        php = float(p @ hp)
        if php <= 0:
            break
        alpha = rr / php
        x += alpha * p
        r -= alpha * hp
        rr_new = float(r @ r)
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x


def _dilated_mask(mask: np.ndarray, half: int) -> np.ndarray:
    if half == 0:
        return mask.copy()
    out = np.zeros_like(mask)
    n0, n1 = mask.shape
    for dy in range(-half, half + 1):
        for dx in range(-half, half + 1):
            src = mask[max(0, -dy) : n0 - max(0, dy), max(0, -dx) : n1 - max(0, dx)]
            out[max(0, dy) : n0 - max(0, -dy), max(0, dx) : n1 - max(0, -dx)] |= src
    return out


class TrainingProblem:
    """Fixed data of an AFBP fit: sinograms, masked targets, and cached
    structure.  The design blocks of the sinogram-kernel half-step can be
    cached (``cache_design``) and shared between problems that differ only
    in their targets."""

    def __init__(self, sinograms, targets, bank: KernelBank, op: RadonOperator, mask=None, cache_design: bool = False):
        geo = bank.geometry
        self.sinograms = np.asarray(sinograms, dtype=np.float64).reshape((-1,) + geo.sinogram_shape)
        if mask is None:
            mask = roi_pixel_mask(bank.roi, geo)
        self.mask = np.asarray(mask, bool)
        targets = np.asarray(targets, dtype=np.float64).reshape((-1,) + geo.image_shape)
        if len(targets) != len(self.sinograms):
            raise ValueError("one target per training sinogram required")
        self.targets = targets * self.mask
        self.op = op
        self.geometry = geo
        self.layout = _SegmentLayout(bank)
        self.kernel_shape = bank.sino_kernels.shape
        self.image_size = bank.image_kernel.shape[0]
        half = self.image_size // 2
        self.support = _dilated_mask(self.mask, half)
        self.support_idx = np.flatnonzero(self.support.ravel())
        self.mask_idx = np.flatnonzero(self.mask.ravel())
        # back-projection restricted to the support, per segment: (|support|, n_rows_i)
        adj = op.matrix.T.tocsr()[self.support_idx]
        nb = geo.n_bins
        scale = np.pi / geo.n_angles
        self._bp_blocks = []
        for k, j in self.layout.rows:
            self._bp_blocks.append((adj[:, k * nb + j] * scale).tocsr())
        self._design_cache = {} if cache_design else None

    def share_with_targets(self, targets) -> "TrainingProblem":
        new = object.__new__(TrainingProblem)
        new.__dict__.update(self.__dict__)
        targets = np.asarray(targets, dtype=np.float64).reshape((-1,) + self.geometry.image_shape)
        new.targets = targets * self.mask
        return new

    def design(self, n: int) -> np.ndarray:
        """``(|support|, d*A*B)`` map from sinogram kernels to the
        back-projected image on the support, for sinogram ``n``."""
        if self._design_cache is not None and n in self._design_cache:
            return self._design_cache[n]
        g = self.sinograms[n]
        blocks = [blk @ self.layout.patches(g, i) if blk.shape[1] else np.zeros((blk.shape[0], int(np.prod(self.kernel_shape[1:]))))
                  for i, blk in enumerate(self._bp_blocks)]
        psi = np.hstack(blocks)
        if self._design_cache is not None:
            self._design_cache[n] = psi
        return psi

    def image_conv_matrix(self, kernel: np.ndarray) -> sp.csr_matrix:
        """Masked output pixels as a sparse map of the support pixels."""
        n = self.geometry.image_size
        half = kernel.shape[0] // 2
        pos = {p: c for c, p in enumerate(self.support_idx)}
        rows, cols, vals = [], [], []
        my, mx = np.divmod(self.mask_idx, n)
        for r, (py, px) in enumerate(zip(my, mx)):
            for a in range(kernel.shape[0]):
                for b in range(kernel.shape[1]):
                    qy, qx = py - (a - half), px - (b - half)
                    if 0 <= qy < n and 0 <= qx < n:
                        c = pos.get(qy * n + qx)
                        if c is not None and kernel[a, b] != 0:
                            rows.append(r)
                            cols.append(c)
                            vals.append(kernel[a, b])
        return sp.csr_matrix((vals, (rows, cols)), shape=(len(self.mask_idx), len(self.support_idx)))

    def objective(self, bank: KernelBank) -> float:
        out = apply_afbp(self.sinograms, bank, self.op, self.layout)
        return float(np.sum(((out - self.targets) * self.mask) ** 2))

    def sino_normal_equations(self, image_kernel: np.ndarray):
        C = self.image_conv_matrix(image_kernel)
        n_par = int(np.prod(self.kernel_shape))
        H = np.zeros((n_par, n_par))
        rhs = np.zeros(n_par)
        c0 = 0.0
        for n in range(len(self.sinograms)):
            phi = C @ self.design(n)
            t = self.targets[n].ravel()[self.mask_idx]
            H += phi.T @ phi
            rhs += phi.T @ t
            c0 += float(t @ t)
        return H, rhs, c0

    def image_normal_equations(self, bank: KernelBank):
        m = self.image_size
        half = m // 2
        n_img = self.geometry.image_size
        my, mx = np.divmod(self.mask_idx, n_img)
        H = np.zeros((m * m, m * m))
        rhs = np.zeros(m * m)
        c0 = 0.0
        h = filter_sinogram(self.sinograms, bank, self.layout)
        u_all = self.op.backproject(h) * (np.pi / self.geometry.n_angles)
        for n in range(len(self.sinograms)):
            u = np.pad(u_all[n], half)
            # q[p, (a, b)] = u(p - (a - half), ...) so that out = q @ kernel.ravel()
            win = sliding_window_view(u, (m, m))[my, mx][:, ::-1, ::-1]
            q = win.reshape(len(my), m * m)
            t = self.targets[n].ravel()[self.mask_idx]
            H += q.T @ q
            rhs += q.T @ t
            c0 += float(t @ t)
        return H, rhs, c0


def _quad(H, rhs, c0, x) -> float:
    return float(x @ (H @ x) - 2.0 * rhs @ x + c0)


def train_alternating(problem: TrainingProblem, init: KernelBank, run: TrainingRun) -> KernelBank:
    """Alternate CG solves for the sinogram kernels and the image kernel
    until the objective changes by less than ``run.tol`` (relative) over a
    full alternation."""
    bank = init.copy()
    run.trace = [problem.objective(bank)]
    run.steps = ["init"]
    prev = run.trace[0]
    for _ in range(run.alternations):
        H, rhs, c0 = problem.sino_normal_equations(bank.image_kernel)
        x = conjugate_gradient(H, rhs, bank.sino_kernels.ravel(), run.cg_iters_sino)
        bank.sino_kernels = x.reshape(bank.sino_kernels.shape)
        obj = _quad(H, rhs, c0, x)
        run.trace.append(obj)
        run.steps.append("sino")

        H, rhs, c0 = problem.image_normal_equations(bank)
        x = conjugate_gradient(H, rhs, bank.image_kernel.ravel(), run.cg_iters_image)
        bank.image_kernel = x.reshape(bank.image_kernel.shape)
        obj = _quad(H, rhs, c0, x)
        run.trace.append(obj)
        run.steps.append("image")
        if not np.isfinite(obj):
            raise TrainingError("non-finite AFBP objective", list(run.trace))
        if abs(prev - obj) <= run.tol * max(abs(prev), 1e-300):
            break
        prev = obj
    bank.meta.update({"objective": run.objective, "sigma": run.sigma, "final_objective": run.trace[-1]})
    return bank


def train_afbp_quality(train_sinos, references, roi: RoiSpec, init: KernelBank, run: TrainingRun, op: RadonOperator) -> KernelBank:
    """Fit kernels minimizing ``sum ||F_ROI(T g - f)||^2`` over noisy
    truncated sinograms ``train_sinos`` and their reference images."""
    problem = TrainingProblem(train_sinos, references, init, op, roi_pixel_mask(roi, init.geometry))
    run.objective = "quality"
    return train_alternating(problem, init, run)


def train_afbp_blur(train_images, sigma: float, roi: RoiSpec, init: KernelBank, run: TrainingRun, op: RadonOperator,
                    problem: TrainingProblem | None = None) -> KernelBank:
    """Fit kernels making ``T R`` mimic a Gaussian blur of width ``sigma``
    inside the ROI, from noiseless truncated projections.

    Pass a ``problem`` built on the same images to reuse cached design
    blocks across several ``sigma``.
    """
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    images = np.asarray(train_images, dtype=np.float64)
    targets = np.stack([gaussian_blur(f, sigma) for f in images])
    if problem is None:
        sinos = truncate_projections(op.project(images), roi, init.geometry)
        problem = TrainingProblem(sinos, targets, init, op, roi_pixel_mask(roi, init.geometry))
    else:
        problem = problem.share_with_targets(targets)
    run.objective = "blur"
    run.sigma = sigma
    return train_alternating(problem, init, run)


def sino_kernel_operator(g: np.ndarray, bank: KernelBank, op: RadonOperator, mask=None):
    """Matrix-free linear map from sinogram kernels to the masked AFBP
    output for one sinogram, with its exact transpose."""
    from scipy.sparse.linalg import LinearOperator

    geo = bank.geometry
    layout = _SegmentLayout(bank)
    mask = roi_pixel_mask(bank.roi, geo) if mask is None else mask
    shape = bank.sino_kernels.shape
    patches = [layout.patches(g, i) for i in range(bank.n_segments)]
    kern = bank.image_kernel
    scale = np.pi / geo.n_angles

    def matvec(theta):
        theta = np.asarray(theta, dtype=np.float64).reshape(shape)
        h = np.zeros(geo.sinogram_shape)
        for i, (k, j) in enumerate(layout.rows):
            h[k, j] = patches[i] @ theta[i].ravel()
        u = op.backproject(h) * scale
        return (image_convolve(u, kern) * mask).ravel()

    def rmatvec(r):
        r = np.asarray(r, dtype=np.float64).reshape(geo.image_shape) * mask
        # adjoint of zero-padded 'same' convolution is correlation
        u = fftconvolve(r, kern[::-1, ::-1], mode="same") if kern.size > 1 else r * kern.ravel()[0]
        h = op.project(u) * scale
        out = np.zeros(shape)
        for i, (k, j) in enumerate(layout.rows):
            out[i] = (patches[i].T @ h[k, j]).reshape(shape[1:])
        return out.ravel()

    n_out = geo.image_size**2
    return LinearOperator((n_out, int(np.prod(shape))), matvec=matvec, rmatvec=rmatvec, dtype=np.float64)
