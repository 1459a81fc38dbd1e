import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from spadesct import kernels
from spadesct.core import Rng, ScanGeometry
from spadesct.evaluate import snr
from spadesct.fbp import CutoffSchedule, FBPReconstructor
from spadesct.legone import (
    ConfidenceParams,
    VarianceMaps,
    calibrate_confidence,
    estimate_variance_maps,
    legone_denoise_1d,
    legone_fuse,
    select_confidence,
    stochastic_bounds,
)
from spadesct.noisesim import ScanProtocol, calibrate_scale, noisy_sinogram
from spadesct.phantoms import PhantomConfig, make_corpus, random_phantom
from spadesct.radon import RadonOperator


def brute_switch(est, rho):
    """Largest i whose prefix intersection of [e-2r, e+2r] is nonempty, per column."""
    n_est, n = est.shape
    out = np.zeros(n, dtype=np.int64)
    for p in range(n):
        best = 0
        for i in range(n_est):
            lo = max(est[j, p] - 2 * rho[j, p] for j in range(i + 1))
            hi = min(est[j, p] + 2 * rho[j, p] for j in range(i + 1))
            if lo <= hi:
                best = i
        out[p] = best
    return out


@pytest.fixture(scope="module")
def small():
    geo = ScanGeometry(30, 33, 24)
    op = RadonOperator(geo)
    bank = [FBPReconstructor(op, f) for f in CutoffSchedule.geometric(4, 1.2, 0.2, 5).filters(geo)]
    f = random_phantom(PhantomConfig(image_size=24, seed=1))
    return geo, op, bank, f


@pytest.mark.parametrize("route", ["numpy", "active"])
def test_switch_rule_matches_brute_force(route):
    fn = kernels.switch_index_numpy if route == "numpy" else kernels.switch_index
    gen = np.random.default_rng(0)
    est = gen.standard_normal((6, 400)).cumsum(axis=0) * 0.3
    rho = gen.random((6, 400)) * 0.5
    np.testing.assert_array_equal(fn(est, rho), brute_switch(est, rho))


def test_backends_agree():
    gen = np.random.default_rng(1)
    est = gen.standard_normal((8, 1000))
    rho = gen.random((8, 1000))
    np.testing.assert_array_equal(kernels.switch_index(est, rho), kernels.switch_index_numpy(est, rho))


def test_bounds_arithmetic():
    maps = VarianceMaps(np.array([[[0.0, 9.0]]]), 2)
    np.testing.assert_allclose(stochastic_bounds(maps, ConfidenceParams(2.0, 1.0)), [[[0.0, 6.0]]])
    np.testing.assert_allclose(stochastic_bounds(maps, ConfidenceParams(1.0, 2.0)), [[[0.0, 9.0]]])


def test_params_and_maps_validation():
    with pytest.raises(ValueError):
        ConfidenceParams(0.0, 1.0)
    with pytest.raises(ValueError):
        VarianceMaps(np.zeros((1, 2, 2)), 1)
    with pytest.raises(ValueError):
        VarianceMaps(-np.ones((1, 2, 2)), 3)


def test_fuse_examples():
    e = np.random.default_rng(2).random((1, 4, 4))
    fused, idx = legone_fuse(e, np.ones_like(e))
    np.testing.assert_array_equal(fused, e[0])
    assert not idx.any()

    same = np.repeat(e, 4, axis=0)
    _, idx = legone_fuse(same, np.full(same.shape, 0.1))
    assert np.all(idx == 3)

    fused, idx = legone_fuse(np.array([[0.0], [10.0]]), np.ones((2, 1)))
    assert idx[0] == 0 and fused[0] == 0.0


@given(st.integers(0, 2**31))
@settings(max_examples=30, deadline=None)
def test_fuse_is_selection_and_monotone_in_rho(seed):
    gen = np.random.default_rng(seed)
    est = gen.standard_normal((5, 50))
    rho = gen.random((5, 50))
    fused, idx = legone_fuse(est, rho)
    np.testing.assert_array_equal(fused, est[idx, np.arange(50)])
    _, idx2 = legone_fuse(est, rho * (1 + gen.random((5, 50))))
    assert np.all(idx2 >= idx)


def test_variance_maps_noiseless_limit(small):
    geo, op, bank, f = small
    g = op.project(f)
    prot = calibrate_scale(g, 1e9, 60.0 * 1e9 / 1200.0)
    maps = estimate_variance_maps(f, bank, prot, 4, Rng(0), op)
    assert maps.maps.sum() < 1e-6 * np.sum(f**2)


def test_variance_maps_convergence_and_ordering(small):
    geo, op, bank, f = small
    prot = calibrate_scale(op.project(f), 1200.0)
    m64 = estimate_variance_maps(f, bank, prot, 64, Rng(3), op).maps
    m128 = estimate_variance_maps(f, bank, prot, 128, Rng(4), op).maps
    rel = np.abs(m64.mean(axis=(1, 2)) - m128.mean(axis=(1, 2))) / m128.mean(axis=(1, 2))
    assert np.all(rel < 0.2)
    means = m128.mean(axis=(1, 2))
    assert np.all(np.diff(means) < 0)


def test_select_single_point_and_dominated(small):
    geo, op, bank, f = small
    prot = calibrate_scale(op.project(f), 1200.0)
    maps = estimate_variance_maps(f, bank, prot, 8, Rng(5), op)
    stacks = [np.stack([b(noisy_sinogram(op.project(f), prot, Rng(6))) for b in bank])]
    p, table = select_confidence([f], stacks, maps, kappas=(1.0,), qs=(1.0,))
    assert (p.kappa, p.q) == (1.0, 1.0) and len(table) == 1
    _, full = select_confidence([f], stacks, maps, kappas=(0.25, 1.0, 4.0), qs=(0.5, 1.0, 2.0))
    best = max(full, key=full.get)
    # grid of the best point plus points that score worse returns the best point
    worse = [k for k, v in full.items() if v < full[best]]
    kap = sorted({best[0]} | {k[0] for k in worse[:2]})
    qs = sorted({best[1]} | {k[1] for k in worse[:2]})
    sub = {k: full[k] for k in full if k[0] in kap and k[1] in qs}
    p, _ = select_confidence([f], stacks, maps, kappas=kap, qs=qs)
    assert (p.kappa, p.q) == max(sub, key=sub.get)


def test_calibration_reproducible_and_safe():
    geo = ScanGeometry(30, 33, 24)
    op = RadonOperator(geo)
    bank = [FBPReconstructor(op, f) for f in CutoffSchedule.geometric(4, 1.2, 0.2, 5).filters(geo)]
    train = make_corpus(PhantomConfig(image_size=24, seed=9), 3)
    prot = calibrate_scale(op.project(np.array(train)), 1200.0)
    p1, maps = calibrate_confidence(train, bank, prot, op, Rng(1), n_instances=8)
    p2, _ = calibrate_confidence(train, bank, prot, op, Rng(1), n_instances=8)
    assert p1 == p2
    # LeGoNe on the calibration corpus is never much worse than any fixed member
    rho = stochastic_bounds(maps, p1)
    stacks = [np.stack([b(noisy_sinogram(op.project(f), prot, Rng(1).child(1, i))) for b in bank]) for i, f in enumerate(train)]
    fused = np.mean([snr(f, legone_fuse(st_, rho)[0]) for f, st_ in zip(train, stacks)])
    fixed = max(np.mean([snr(f, st_[i]) for f, st_ in zip(train, stacks)]) for i in range(len(bank)))
    assert fused >= fixed - 0.3


def test_1d_constant_signal():
    y = np.full(50, 3.0)
    fused, idx, _, _ = legone_denoise_1d(y, [0, 1, 3, 7], 0.0, return_index=True)
    np.testing.assert_allclose(fused, y)
    assert np.all(idx == 3)


def test_1d_windows_shrink_at_step():
    gen = np.random.default_rng(4)
    f = np.where(np.arange(200) < 100, 0.0, 5.0)
    y = f + 0.05 * gen.standard_normal(200)
    _, idx, _, _ = legone_denoise_1d(y, [0, 1, 2, 4, 8, 16, 32], 0.05, return_index=True)
    assert idx[99] < idx[30] and idx[100] < idx[170]


def test_1d_radii_must_increase():
    with pytest.raises(ValueError):
        legone_denoise_1d(np.zeros(5), [2, 1], 1.0)
