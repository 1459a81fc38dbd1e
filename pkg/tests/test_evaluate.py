import dataclasses

import numpy as np
import pytest

from spadesct.evaluate import (
    SNR_CAP_DB,
    ExperimentConfig,
    UndefinedMetricError,
    blur_quality_curve,
    curve_argmax,
    format_table,
    mean_snr,
    run_experiment,
    snr,
    write_curve_csv,
)


def test_snr_examples():
    gen = np.random.default_rng(0)
    f = gen.random((8, 8)) + 0.1
    assert snr(f, f) == SNR_CAP_DB == 300.0
    assert snr(f, np.zeros_like(f)) == pytest.approx(0.0, abs=1e-12)
    e = gen.standard_normal(f.shape)
    e *= 0.1 * np.linalg.norm(f) / np.linalg.norm(e)
    assert snr(f, f + e) == pytest.approx(20.0, abs=1e-9)


def test_snr_scale_invariance_and_noise():
    gen = np.random.default_rng(1)
    f = gen.random((16, 16))
    est = f + 0.1 * gen.standard_normal(f.shape)
    assert snr(3.0 * f, 3.0 * est) == pytest.approx(snr(f, est), abs=1e-10)
    assert snr(f, est + 0.2 * gen.standard_normal(f.shape)) < snr(f, est)


def test_snr_undefined_and_mask():
    with pytest.raises(UndefinedMetricError):
        snr(np.zeros((3, 3)), np.ones((3, 3)))
    f = np.ones((4, 4))
    est = f.copy()
    est[0, 0] = 100.0
    mask = np.ones((4, 4), bool)
    mask[0, 0] = False
    assert snr(f, est, mask) == SNR_CAP_DB
    assert mean_snr([f, f], [f * 0, f * 0]) == pytest.approx(0.0, abs=1e-12)


def test_config_roundtrip_and_unknown_keys():
    cfg = ExperimentConfig(scenario="roi", seed=4)
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        ExperimentConfig(scenario="helical")


def test_curve_helpers(tmp_path):
    assert curve_argmax([(1.0, 5.0), (2.0, 7.0), (3.0, 7.0)]) == 2.0
    assert curve_argmax([(0.4, 1.0)]) == 0.4
    write_curve_csv(tmp_path / "c.csv", {"b": [(1.0, 2.0)], "a": [(0.5, 3.0), (0.7, 2.5)]})
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "estimator,index,zeta,snr_db"
    assert lines[1].startswith("a,0,0.5,3.0")
    assert lines[3].startswith("b,0,")


def test_single_estimator_curve(geo32, op32):
    from spadesct.fbp import FBPReconstructor, ramlak_filter
    from spadesct.phantoms import PhantomConfig, make_corpus

    imgs = np.array(make_corpus(PhantomConfig(image_size=32, seed=1), 2))
    g = op32.project(imgs)
    curve = blur_quality_curve([FBPReconstructor(op32, ramlak_filter(geo32))], imgs, g, imgs, g)
    assert len(curve) == 1
    z, q = curve[0]
    assert np.isfinite(q) and z > 0


SMALL = dict(
    image_size=32, n_angles=45, n_bins=47, train_count=4, test_count=3, fbp_count=4, legone_count=5,
    legone_train_count=3, legone_instances=4, samples_per_image=300, restarts=1, max_iter=60, n_neurons=6,
)


def test_noiseless_fbp_only_report():
    cfg = ExperimentConfig(source_intensity=1e12, min_count=5e10, legone=False, spades=False, fbp_count=1,
                           **{k: v for k, v in SMALL.items() if k != "fbp_count"})
    rep = run_experiment(cfg)
    assert set(rep.methods) == {"fbp_ramlak", "fbp_best"}
    assert "fbp_ramlak" in format_table(rep)


def test_full_scan_report_is_reproducible():
    cfg = ExperimentConfig(**SMALL)
    a = run_experiment(cfg)
    b = run_experiment(cfg)
    assert a.to_json() == b.to_json()
    assert set(a.methods) >= {"fbp_ramlak", "fbp_best", "legone", "spades"}
    assert a.body["config"] == cfg.to_dict()


def test_roi_report_orders_trunc_below_afbp():
    cfg = ExperimentConfig(scenario="roi", roi_radius=10.0, spades=False, blur_sigmas=(0.0, 1.0),
                           self_check_sigma=None, curve_count=3, alternations=1, noise_instances=2, **SMALL)
    rep = run_experiment(cfg)
    assert rep.methods["fbp_trunc"] < rep.methods["afbp"]
