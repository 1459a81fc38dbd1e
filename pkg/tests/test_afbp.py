import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spadesct.afbp import (
    AFBPReconstructor,
    KernelBank,
    TrainingProblem,
    TrainingRun,
    apply_afbp,
    blur_distance,
    blur_measure,
    conjugate_gradient,
    gaussian_blur,
    gaussian_kernel,
    init_bank,
    mask_roi,
    sino_kernel_operator,
    train_afbp_blur,
    train_afbp_quality,
    train_alternating,
    truncate_projections,
    _SegmentLayout,
)
from spadesct.core import RoiSpec, Rng, ScanGeometry, roi_pixel_mask
from spadesct.fbp import CutoffSchedule, FBPReconstructor, fbp_reconstruct, ramlak_filter
from spadesct.phantoms import PhantomConfig, make_corpus
from spadesct.radon import RadonOperator


@pytest.fixture(scope="module")
def tiny():
    geo = ScanGeometry(12, 23, 16)
    op = RadonOperator(geo)
    roi = RoiSpec(5.0)
    imgs = np.array(make_corpus(PhantomConfig(image_size=16, seed=3), 3))
    return geo, op, roi, imgs


@pytest.fixture(scope="module")
def small():
    geo = ScanGeometry(36, 47, 32)
    op = RadonOperator(geo)
    roi = RoiSpec(10.0)
    imgs = np.array(make_corpus(PhantomConfig(image_size=32, seed=5), 4))
    return geo, op, roi, imgs


def test_truncation_examples():
    geo = ScanGeometry(10, 21, 16)
    g = np.random.default_rng(0).random(geo.sinogram_shape)
    np.testing.assert_array_equal(truncate_projections(g, RoiSpec(8.0, 8.0), geo), g)
    only = truncate_projections(g, RoiSpec(0.0, 0.0), geo)
    np.testing.assert_array_equal(only[:, 10], g[:, 10])
    assert not np.delete(only, 10, axis=1).any()


def test_truncation_band_width():
    geo = ScanGeometry(30, 191, 128)
    roi = RoiSpec(32.0)
    kept = truncate_projections(np.ones(geo.sinogram_shape), roi, geo)[0]
    half = int(np.floor(1.1 * 32.0 / geo.bin_spacing))
    assert kept.sum() == 2 * half + 1


def test_mask_roi_properties():
    geo = ScanGeometry(10, 21, 16)
    f = np.random.default_rng(1).random(geo.image_shape)
    np.testing.assert_array_equal(mask_roi(f, RoiSpec(12.0), geo), f)
    roi = RoiSpec(5.0)
    once = mask_roi(f, roi, geo)
    np.testing.assert_array_equal(mask_roi(once, roi, geo), once)
    assert once.sum() == pytest.approx(f[roi_pixel_mask(roi, geo)].sum())


def test_bank_validation(tiny):
    geo, op, roi, _ = tiny
    bank = init_bank(geo, roi, 2, 3, 5, 3)
    with pytest.raises(ValueError):
        KernelBank(geo, roi, bank.segments, np.zeros((2, 3, 4)), bank.image_kernel)
    with pytest.raises(ValueError):
        KernelBank(geo, roi, bank.segments, bank.sino_kernels, np.zeros((2, 2)))


def test_segment_covering(small):
    geo, op, roi, _ = small
    bank = init_bank(geo, roi, 5, 3, 9, 3)
    seg = bank.bin_segments()
    inside = np.abs(geo.bins) <= bank.radius + 1e-9
    assert np.all(seg[inside] >= 0) and np.all(seg[~inside] == -1)
    layout = _SegmentLayout(bank)
    seen = np.zeros(geo.sinogram_shape, int)
    for k, j in layout.rows:
        np.add.at(seen, (k, j), 1)
    assert np.all(seen[:, inside] == 1) and not seen[:, ~inside].any()


def test_zero_kernels_zero_image(tiny):
    geo, op, roi, imgs = tiny
    bank = init_bank(geo, roi, 2, 3, 5, 3)
    bank.sino_kernels[:] = 0
    assert not apply_afbp(op.project(imgs[0]), bank, op).any()


def test_degenerate_bank_equals_fbp(small):
    geo, op, roi, imgs = small
    bank = init_bank(geo, roi, 1, 1, 2 * geo.n_bins - 1, 1, ramlak_filter(geo), radius=geo.support_radius)
    g = op.project(imgs[0])
    np.testing.assert_allclose(apply_afbp(g, bank, op), fbp_reconstruct(g, ramlak_filter(geo), op), atol=1e-9)


@given(st.integers(0, 2**31))
@settings(max_examples=5, deadline=None)
def test_apply_linear(seed):
    geo = ScanGeometry(12, 23, 16)
    op = RadonOperator(geo)
    bank = init_bank(geo, RoiSpec(5.0), 2, 3, 5, 3)
    gen = np.random.default_rng(seed)
    bank.sino_kernels = gen.standard_normal(bank.sino_kernels.shape)
    bank.image_kernel = gen.standard_normal(bank.image_kernel.shape)
    g1, g2 = gen.standard_normal((2,) + geo.sinogram_shape)
    np.testing.assert_allclose(
        apply_afbp(2 * g1 - g2, bank, op), 2 * apply_afbp(g1, bank, op) - apply_afbp(g2, bank, op), atol=1e-10
    )


def test_geometry_mismatch_raises(tiny):
    geo, op, roi, _ = tiny
    bank = init_bank(geo, roi, 2, 3, 5, 3)
    other = RadonOperator(ScanGeometry(12, 25, 16))
    with pytest.raises(ValueError):
        apply_afbp(np.zeros((12, 25)), bank, other)


def test_operator_adjoint(tiny):
    geo, op, roi, imgs = tiny
    bank = init_bank(geo, roi, 2, 3, 5, 3)
    gen = np.random.default_rng(3)
    bank.image_kernel = gen.standard_normal(bank.image_kernel.shape)
    A = sino_kernel_operator(gen.standard_normal(geo.sinogram_shape), bank, op)
    x = gen.standard_normal(A.shape[1])
    y = gen.standard_normal(A.shape[0])
    lhs, rhs = y @ A.matvec(x), x @ A.rmatvec(y)
    assert abs(lhs - rhs) <= 1e-9 * abs(lhs)


def _probe_design(g, bank, op, mask):
    """Dense design by applying unit kernels one at a time."""
    cols = []
    probe = bank.copy()
    for c in range(bank.sino_kernels.size):
        k = np.zeros(bank.sino_kernels.size)
        k[c] = 1.0
        probe.sino_kernels = k.reshape(bank.sino_kernels.shape)
        cols.append(apply_afbp(g, probe, op)[mask])
    return np.array(cols).T


def test_cg_matches_dense_solve(tiny):
    geo, op, roi, imgs = tiny
    bank = init_bank(geo, roi, 1, 3, 5, 1)
    sinos = truncate_projections(op.project(imgs), roi, geo)
    mask = roi_pixel_mask(roi, geo)
    problem = TrainingProblem(sinos, imgs, bank, op, mask)
    H, rhs, c0 = problem.sino_normal_equations(bank.image_kernel)
    x = conjugate_gradient(H, rhs, np.zeros_like(rhs), 500)
    A = np.vstack([_probe_design(g, bank, op, mask) for g in sinos])
    b = np.concatenate([f[mask] for f in imgs])
    dense = np.linalg.lstsq(A, b, rcond=None)[0]
    np.testing.assert_allclose(A @ x, A @ dense, atol=1e-6 * np.abs(b).max())
    np.testing.assert_allclose(H, A.T @ A, rtol=1e-9, atol=1e-9 * np.abs(H).max())


def test_fixed_point(tiny):
    geo, op, roi, imgs = tiny
    init = init_bank(geo, roi, 2, 3, 5, 3)
    sinos = truncate_projections(op.project(imgs), roi, geo)
    targets = apply_afbp(sinos, init, op)
    problem = TrainingProblem(sinos, targets, init, op)
    assert problem.objective(init) == pytest.approx(0.0, abs=1e-20)
    run = TrainingRun(alternations=2)
    out = train_alternating(problem, init, run)
    assert run.trace[-1] <= 1e-12 * np.sum(targets**2)
    np.testing.assert_allclose(apply_afbp(sinos, out, op), targets, atol=1e-6 * np.abs(targets).max())


def test_blur_sigma_zero_equals_noiseless_quality(tiny):
    geo, op, roi, imgs = tiny
    init = init_bank(geo, roi, 2, 3, 5, 3)
    a = train_afbp_blur(imgs, 0.0, roi, init, TrainingRun(alternations=1), op)
    b = train_afbp_quality(truncate_projections(op.project(imgs), roi, geo), imgs, roi, init, TrainingRun(alternations=1), op)
    np.testing.assert_allclose(a.sino_kernels, b.sino_kernels, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(a.image_kernel, b.image_kernel, rtol=1e-9, atol=1e-12)


def test_training_trace_monotone(small):
    geo, op, roi, imgs = small
    init = init_bank(geo, roi, 3, 3, None, None, None)
    gen = Rng(1)
    from spadesct.noisesim import calibrate_scale, noisy_sinogram

    clean = op.project(imgs)
    prot = calibrate_scale(clean, 1200.0)
    sinos = np.array([noisy_sinogram(g, prot, gen.child(i)) for i, g in enumerate(clean)])
    run = TrainingRun(alternations=3)
    train_afbp_quality(truncate_projections(sinos, roi, geo), imgs, roi, init, run, op)
    t = np.array(run.trace)
    assert t[1] < t[0] and t[2] <= t[1]
    assert np.all(np.diff(t) <= 1e-9 * t[0])
    assert run.steps[:3] == ["init", "sino", "image"]


def test_shared_problem_equals_fresh(tiny):
    geo, op, roi, imgs = tiny
    init = init_bank(geo, roi, 2, 3, 5, 3)
    base = TrainingProblem(truncate_projections(op.project(imgs), roi, geo), imgs, init, op, cache_design=True)
    a = train_afbp_blur(imgs, 1.0, roi, init, TrainingRun(alternations=1), op, problem=base)
    b = train_afbp_blur(imgs, 1.0, roi, init, TrainingRun(alternations=1), op)
    np.testing.assert_allclose(a.sino_kernels, b.sino_kernels, rtol=1e-10, atol=1e-14)


def test_reconstructor_truncates(small):
    geo, op, roi, imgs = small
    bank = init_bank(geo, roi, 3, 3, None, None, None)
    g = op.project(imgs[0])
    rec = AFBPReconstructor(bank, op)
    np.testing.assert_allclose(rec(g), apply_afbp(truncate_projections(g, roi, geo), bank, op))
    assert rec.tag == bank.tag and rec.tag.startswith("afbp:")


def test_gaussian_kernel():
    np.testing.assert_array_equal(gaussian_kernel(0.0), np.ones((1, 1)))
    for s in (0.5, 1.0, 2.0, 3.3):
        k = gaussian_kernel(s)
        assert abs(k.sum() - 1.0) < 1e-12
    k = gaussian_kernel(2.0)
    half = k.shape[0] // 2
    r = np.arange(-half, half + 1)
    second = np.sum(k.sum(axis=0) * r**2)
    assert second == pytest.approx(4.0, rel=0.02)


def test_blur_measure_recovers_synthetic_sigma():
    imgs = make_corpus(PhantomConfig(image_size=32, seed=2), 3)
    for s0 in (0.0, 0.8, 1.7):
        pairs = [(gaussian_blur(f, s0), f) for f in imgs]
        assert blur_measure(pairs) == pytest.approx(s0, abs=0.01)


def test_blur_measure_matches_dense_sweep(small):
    geo, op, roi, imgs = small
    rec = FBPReconstructor(op, CutoffSchedule(2.0, (0.4,)).filters(geo)[0])
    pairs = [(rec(op.project(f)), f) for f in imgs]
    zeta = blur_measure(pairs)
    grid = np.arange(0.0, 8.0, 0.01)
    dense = grid[np.argmin([blur_distance(pairs, s) for s in grid])]
    assert abs(zeta - dense) <= 0.02


def test_blur_measure_increases_with_apodization(small):
    geo, op, roi, imgs = small
    recs = [FBPReconstructor(op, f) for f in CutoffSchedule.geometric(2.0, 1.0, 0.2, 5).filters(geo)]
    zetas = [blur_measure([(r(op.project(f)), f) for f in imgs]) for r in recs]
    assert np.all(np.diff(zetas) > 0)
