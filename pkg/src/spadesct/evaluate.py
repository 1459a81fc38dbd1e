"""Quality metrics and experiment orchestration."""
from __future__ import annotations

import csv
import dataclasses
import time
from dataclasses import dataclass, field

import numpy as np

from .core import Rng, RoiSpec, ScanGeometry, roi_pixel_mask

SNR_CAP_DB = 300.0

# stream identifiers under Rng(config.seed)
STREAM_TEST_NOISE = 2
STREAM_TRAIN_NOISE = 3
STREAM_AFBP_NOISE = 4
STREAM_NN_SAMPLES = 5
STREAM_NN_INIT = 6
STREAM_LEGONE = 7


class UndefinedMetricError(ValueError):
    pass


def snr(reference, estimate, mask=None) -> float:
    """``-20 log10(||f0 - f|| / ||f0||)`` in dB over the (masked) pixels.

    A perfect estimate is reported as ``SNR_CAP_DB``.
    """
    f0 = np.asarray(reference, dtype=np.float64)
    f = np.asarray(estimate, dtype=np.float64)
    if f0.shape != f.shape:
        raise ValueError(f"shape mismatch {f0.shape} vs {f.shape}")
    if mask is not None:
        f0, f = f0[mask], f[mask]
    ref = np.linalg.norm(f0)
    if ref == 0:
        raise UndefinedMetricError("reference has zero norm on the metric region")
    err = np.linalg.norm(f0 - f)
    if err == 0:
        return SNR_CAP_DB
    return float(min(SNR_CAP_DB, -20.0 * np.log10(err / ref)))


def mean_snr(references, estimates, mask=None) -> float:
    return float(np.mean([snr(f, x, mask) for f, x in zip(references, estimates)]))


# ------------------------------------------------------------------ configuration

@dataclass
class ExperimentConfig:
    """Everything that determines a report.  Train and test phantoms come
    from disjoint seeds; all noise derives from ``seed``."""

    scenario: str = "full-scan"
    seed: int = 0
    image_size: int = 64
    n_angles: int = 90
    n_bins: int = 95
    train_count: int = 15
    test_count: int = 8
    train_seed: int = 1000
    test_seed: int = 2000
    source_intensity: float = 1200.0
    min_count: float = 60.0
    # apodized FBP schedule: SPADES bank (full scan) and FBP baselines
    fbp_p: float = 2.0
    fbp_q: tuple = (1.2, 0.15)
    fbp_count: int = 10
    # LeGoNe (full scan)
    legone: bool = True
    legone_p: float = 4.0
    legone_q: tuple = (1.2, 0.15)
    legone_count: int = 16
    legone_train_count: int = 10
    legone_instances: int = 32
    kappas: tuple = tuple(float(k) for k in np.geomspace(0.25, 4.0, 13))
    qs: tuple = (0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0)
    # SPADES
    spades: bool = True
    n_neurons: int = 24
    restarts: int = 3
    max_iter: int = 500
    samples_per_image: int = 1600
    # penalized likelihood (full scan, optional)
    pl: bool = False
    pl_betas: tuple = (30.0, 100.0, 300.0)
    pl_deltas: tuple = (0.05,)
    pl_iters: int = 300
    pl_train_count: int = 3
    # ROI
    roi_radius: float = 20.0
    measurement_radius: float | None = None
    afbp_segments: int = 5
    afbp_angle_extent: int = 5
    afbp_bin_extent: int | None = None
    afbp_image_kernel: int | None = None
    afbp_base_p: float = 2.0
    afbp_base_q: float = 0.6
    noise_instances: int = 4
    alternations: int = 3
    cg_iters_sino: int = 150
    cg_iters_image: int = 100
    afbp_tol: float = 1e-5
    blur_sigmas: tuple = tuple(float(s) for s in np.linspace(0.0, 3.5, 10))
    self_check_sigma: float | None = 2.0
    curve_p: float = 0.5
    curve_q: tuple = (40.0, 0.2)
    curve_count: int = 14

    def __post_init__(self):
        if self.scenario not in ("full-scan", "roi"):
            raise ValueError("scenario must be 'full-scan' or 'roi'")
        if self.train_count < 1 or self.test_count < 1:
            raise ValueError("corpora must be nonempty")
        if self.train_seed == self.test_seed:
            raise ValueError("train and test corpus seeds must differ")
        for name in ("fbp_q", "legone_q", "kappas", "qs", "pl_betas", "pl_deltas", "blur_sigmas", "curve_q"):
            setattr(self, name, tuple(float(v) for v in getattr(self, name)))

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    def geometry(self) -> ScanGeometry:
        return ScanGeometry(self.n_angles, self.n_bins, self.image_size)

    def roi(self) -> RoiSpec:
        return RoiSpec(self.roi_radius, self.measurement_radius)


@dataclass
class Report:
    """``body`` is a pure function of the config; ``runtime`` holds timings
    and ``artifacts`` the trained objects (neither is serialized with the body)."""

    body: dict
    runtime: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)

    def to_json(self) -> str:
        from .io import to_json

        return to_json(self.body)

    @property
    def methods(self) -> dict:
        return self.body["methods"]


class _Timer:
    def __init__(self):
        self.stages = {}

    def __call__(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t = time.perf_counter()

            def __exit__(self, *exc):
                timer.stages[name] = timer.stages.get(name, 0.0) + time.perf_counter() - self.t

        return _Ctx()


def _floats(x):
    return [float(v) for v in x]


def _monotone(trace, rtol: float = 1e-12) -> bool:
    t = np.asarray(trace, dtype=np.float64)
    return bool(np.all(np.diff(t) <= rtol * np.abs(t[:-1]).clip(1.0)))


# ------------------------------------------------------------------- experiments

def _setup(cfg: ExperimentConfig):
    from .noisesim import calibrate_scale
    from .phantoms import PhantomConfig, make_corpus
    from .radon import RadonOperator

    geo = cfg.geometry()
    op = RadonOperator(geo)
    train = np.array(make_corpus(PhantomConfig(image_size=cfg.image_size, seed=cfg.train_seed), cfg.train_count))
    test = np.array(make_corpus(PhantomConfig(image_size=cfg.image_size, seed=cfg.test_seed), cfg.test_count))
    protocol = calibrate_scale(op.project(train), cfg.source_intensity, cfg.min_count)
    return geo, op, train, test, protocol


def _noisy(images, protocol, op, rng: Rng, instances: int = 1):
    from .noisesim import noisy_sinogram

    clean = op.project(images)
    return np.array([noisy_sinogram(clean[i], protocol, rng.child(i, j)) for i in range(len(images)) for j in range(instances)])


def _schedule_snrs(recs, refs, sinos, mask=None):
    """``(n_estimators, n_images)`` SNR table."""
    return np.array([[snr(f, x, mask) for f, x in zip(refs, rec(sinos))] for rec in recs])


def _train_spades(cfg, train, stacks, layout, mask=None):
    from .nnfusion import OptimizerConfig, build_training_batch, train_net

    region = train[0].size if mask is None else int(np.count_nonzero(mask))
    n_samples = min(cfg.samples_per_image, region) * len(train)
    root = Rng(cfg.seed)
    batch = build_training_batch(train, stacks, layout, n_samples, root.child(STREAM_NN_SAMPLES), mask=mask)
    opt = OptimizerConfig(restarts=cfg.restarts, max_iter=cfg.max_iter)
    net = train_net(batch, cfg.n_neurons, opt, root.child(STREAM_NN_INIT))
    net.layout = layout
    return net


def run_full_scan(cfg: ExperimentConfig) -> Report:
    from .fbp import CutoffSchedule, FBPReconstructor, ramlak_filter
    from .legone import ConfidenceParams, calibrate_confidence, legone_fuse, stochastic_bounds
    from .nnfusion import FeatureLayout, spades_fuse

    tm = _Timer()
    with tm("setup"):
        geo, op, train, test, protocol = _setup(cfg)
        root = Rng(cfg.seed)
        g_test = _noisy(test, protocol, op, root.child(STREAM_TEST_NOISE))
    body = {"scenario": "full-scan", "config": cfg.to_dict(), "protocol": protocol.to_dict()}
    methods, per_image, artifacts = {}, {}, {}

    with tm("fbp"):
        sched = CutoffSchedule.geometric(cfg.fbp_p, cfg.fbp_q[0], cfg.fbp_q[1], cfg.fbp_count)
        bank = [FBPReconstructor(op, f) for f in sched.filters(geo)]
        fbp_table = _schedule_snrs(bank, test, g_test)
        ramlak = _schedule_snrs([FBPReconstructor(op, ramlak_filter(geo))], test, g_test)[0]
    methods["fbp_ramlak"] = float(ramlak.mean())
    per_image["fbp_ramlak"] = _floats(ramlak)
    body["fbp_schedule_test_snr"] = _floats(fbp_table.mean(axis=1))
    best_tables = [fbp_table]

    if cfg.legone:
        with tm("legone"):
            lsched = CutoffSchedule.geometric(cfg.legone_p, cfg.legone_q[0], cfg.legone_q[1], cfg.legone_count)
            lbank = [FBPReconstructor(op, f) for f in lsched.filters(geo)]
            params, maps = calibrate_confidence(
                train[: cfg.legone_train_count], lbank, protocol, op, root.child(STREAM_LEGONE),
                cfg.kappas, cfg.qs, n_instances=cfg.legone_instances,
            )
            rho = stochastic_bounds(maps, params)
            stacks = np.stack([rec(g_test) for rec in lbank], axis=1)
            fused = [legone_fuse(st, rho)[0] for st in stacks]
            leg = np.array([snr(f, x) for f, x in zip(test, fused)])
            ltable = np.array([[snr(f, st[i]) for f, st in zip(test, stacks)] for i in range(len(lbank))])
        best_tables.append(ltable)
        methods["legone"] = float(leg.mean())
        per_image["legone"] = _floats(leg)
        body["legone_schedule_test_snr"] = _floats(ltable.mean(axis=1))
        body["legone_params"] = {"kappa": params.kappa, "q": params.q}
        artifacts["legone"] = (params, maps)

    # best apodized FBP: the single schedule member with the highest mean test SNR
    rows = np.concatenate(best_tables)
    best_row = rows[int(np.argmax(rows.mean(axis=1)))]
    methods["fbp_best"] = float(best_row.mean())
    per_image["fbp_best"] = _floats(best_row)

    if cfg.spades:
        with tm("spades"):
            g_train = _noisy(train, protocol, op, root.child(STREAM_TRAIN_NOISE))
            train_stacks = np.stack([rec(g_train) for rec in bank], axis=1)
            train_snr = np.array([[snr(f, st[i]) for f, st in zip(train, train_stacks)] for i in range(len(bank))]).mean(axis=1)
            best = int(np.argmax(train_snr))
            layout = FeatureLayout(len(bank), best)
            net = _train_spades(cfg, train, train_stacks, layout)
            net.tags = tuple(rec.tag for rec in bank)
            test_stacks = np.stack([rec(g_test) for rec in bank], axis=1)
            sp = np.array([snr(f, spades_fuse(st, net, layout)) for f, st in zip(test, test_stacks)])
        methods["spades"] = float(sp.mean())
        methods["spades_linear"] = float(fbp_table[best].mean())
        per_image["spades"] = _floats(sp)
        body["spades_best_index"] = best
        body["spades_train_snr"] = _floats(train_snr)
        body["nn_final_objective"] = [float(t[-1]) for t in net.traces]
        body["nn_trace_monotone"] = all(_monotone(t) for t in net.traces)
        artifacts["net"] = net
        artifacts["bank"] = bank

    if cfg.pl:
        with tm("pl"):
            methods["pl"], per_image["pl"], body["pl_params"], traces = _run_pl(cfg, geo, op, train, test, protocol, root)
        body["pl_trace_monotone"] = all(_monotone(t) for t in traces)

    body["methods"] = methods
    body["per_image"] = per_image
    return Report(body, {"stages": tm.stages}, artifacts)


def _run_pl(cfg, geo, op, train, test, protocol, root):
    from .iterative import PLConfig, pl_reconstruct
    from .noisesim import expected_counts, sample_counts

    def counts(images, stream):
        clean = op.project(images)
        return [sample_counts(expected_counts(g, protocol), root.child(stream, i, 0)) for i, g in enumerate(clean)]

    y_train = counts(train[: cfg.pl_train_count], STREAM_TRAIN_NOISE)
    best, best_score = None, -np.inf
    for beta in cfg.pl_betas:
        for delta in cfg.pl_deltas:
            pc = PLConfig(beta, delta, cfg.pl_iters)
            score = np.mean([snr(f, pl_reconstruct(y, pc, protocol, op).image) for f, y in zip(train, y_train)])
            if score > best_score:
                best, best_score = pc, score
    results = [pl_reconstruct(y, best, protocol, op) for y in counts(test, STREAM_TEST_NOISE)]
    vals = np.array([snr(f, r.image) for f, r in zip(test, results)])
    return float(vals.mean()), _floats(vals), {"beta": best.beta, "delta": best.delta}, [r.trace for r in results]


def blur_quality_curve(estimators, zeta_images, zeta_inputs, test_images, test_inputs, mask=None):
    """``(zeta, mean test SNR)`` for every estimator.

    ``zeta_inputs`` are the noiseless inputs (sinograms) of ``zeta_images``;
    ``test_inputs`` are the noisy inputs of ``test_images``.
    """
    from .afbp import blur_measure

    out = []
    for rec in estimators:
        clean = rec(zeta_inputs)
        if mask is not None:
            clean = clean * mask
        zeta = blur_measure(list(zip(clean, zeta_images)), mask)
        out.append((float(zeta), mean_snr(test_images, rec(test_inputs), mask)))
    return out


def curve_argmax(curve) -> float:
    """``zeta`` of the highest-SNR point; ties go to the smaller ``zeta``."""
    best = max(curve, key=lambda p: (p[1], -p[0]))
    return float(best[0])


def run_roi(cfg: ExperimentConfig) -> Report:
    from . import afbp as A
    from .fbp import CutoffSchedule, FBPReconstructor, butterworth_apodize, measured_band, ramlak_filter
    from .nnfusion import FeatureLayout, spades_fuse

    tm = _Timer()
    with tm("setup"):
        geo, op, train, test, protocol = _setup(cfg)
        roi = cfg.roi()
        roi.validate(geo)
        mask = roi_pixel_mask(roi, geo)
        band = measured_band(geo, roi.measurement_radius)
        root = Rng(cfg.seed)
        g_test_full = _noisy(test, protocol, op, root.child(STREAM_TEST_NOISE))
        trunc = lambda g: A.truncate_projections(g, roi, geo)  # noqa: E731
        g_test = trunc(g_test_full)
    body = {"scenario": "roi", "config": cfg.to_dict(), "protocol": protocol.to_dict()}
    methods, per_image, artifacts = {}, {}, {}

    with tm("fbp"):
        sched = CutoffSchedule.geometric(cfg.fbp_p, cfg.fbp_q[0], cfg.fbp_q[1], cfg.fbp_count)
        full_table = _schedule_snrs([FBPReconstructor(op, f) for f in sched.filters(geo)], test, g_test_full, mask)
        trunc_table = _schedule_snrs(
            [FBPReconstructor(op, f, completion_band=band) for f in sched.filters(geo)], test, g_test, mask
        )
    for name, table in (("fbp_full", full_table), ("fbp_trunc", trunc_table)):
        row = table[int(np.argmax(table.mean(axis=1)))]
        methods[name] = float(row.mean())
        per_image[name] = _floats(row)

    init = A.init_bank(
        geo, roi, cfg.afbp_segments, cfg.afbp_angle_extent, cfg.afbp_bin_extent, cfg.afbp_image_kernel,
        butterworth_apodize(ramlak_filter(geo), cfg.afbp_base_p, cfg.afbp_base_q),
    )

    def new_run():
        return A.TrainingRun(cg_iters_sino=cfg.cg_iters_sino, cg_iters_image=cfg.cg_iters_image,
                             alternations=cfg.alternations, tol=cfg.afbp_tol)

    traces = {}
    with tm("afbp_quality"):
        g_afbp = trunc(_noisy(train, protocol, op, root.child(STREAM_AFBP_NOISE), cfg.noise_instances))
        run = new_run()
        t_o = A.train_afbp_quality(g_afbp, np.repeat(train, cfg.noise_instances, axis=0), roi, init, run, op)
        traces["quality"] = run.trace
        rec_o = A.AFBPReconstructor(t_o, op, truncate=False)
        af = np.array([snr(f, x, mask) for f, x in zip(test, rec_o(g_test))])
    methods["afbp"] = float(af.mean())
    per_image["afbp"] = _floats(af)

    with tm("afbp_blur"):
        clean_train = trunc(op.project(train))
        problem = A.TrainingProblem(clean_train, train, init, op, mask, cache_design=True)
        blur_banks = []
        for s in cfg.blur_sigmas:
            run = new_run()
            blur_banks.append(A.train_afbp_blur(train, s, roi, init, run, op, problem=problem))
            traces[f"blur_{s!r}"] = run.trace
        blur_recs = [A.AFBPReconstructor(b, op, truncate=False) for b in blur_banks]
        if cfg.self_check_sigma is not None:
            run = new_run()
            check = A.train_afbp_blur(train, cfg.self_check_sigma, roi, init, run, op, problem=problem)
            traces[f"blur_{cfg.self_check_sigma!r}_check"] = run.trace
            out = A.AFBPReconstructor(check, op, truncate=False)(trunc(op.project(test))) * mask
            body["self_check"] = {"sigma": cfg.self_check_sigma, "zeta": A.blur_measure(list(zip(out, test)), mask)}
            artifacts["check_bank"] = check
        del problem
    body["afbp_final_objective"] = {k: float(v[-1]) for k, v in sorted(traces.items())}
    body["afbp_trace_monotone"] = all(_monotone(t) for t in traces.values())
    artifacts.update(quality_bank=t_o, blur_banks=blur_banks, afbp_traces=traces)

    with tm("curves"):
        curves = {"afbp": blur_quality_curve(blur_recs, train, clean_train, test, g_test, mask)}
        csched = CutoffSchedule.geometric(cfg.curve_p, cfg.curve_q[0], cfg.curve_q[1], cfg.curve_count)
        fbp_recs = [FBPReconstructor(op, f, completion_band=band) for f in csched.filters(geo)]
        curves[f"fbp_p{cfg.curve_p!r}"] = blur_quality_curve(fbp_recs, train, clean_train, test, g_test, mask)
    body["curves"] = {k: [[z, q] for z, q in v] for k, v in curves.items()}
    body["curve_argmax"] = {k: curve_argmax(v) for k, v in curves.items()}

    if cfg.spades:
        with tm("spades"):
            bank = [rec_o] + blur_recs
            layout = FeatureLayout(len(bank), 0)
            g_train = trunc(_noisy(train, protocol, op, root.child(STREAM_TRAIN_NOISE)))
            train_stacks = np.stack([rec(g_train) for rec in bank], axis=1)
            net = _train_spades(cfg, train, train_stacks, layout, mask)
            net.tags = tuple(rec.tag for rec in bank)
            test_stacks = np.stack([rec(g_test) for rec in bank], axis=1)
            sp = np.array([snr(f, spades_fuse(st, net, layout, mask), mask) for f, st in zip(test, test_stacks)])
        methods["spades"] = float(sp.mean())
        per_image["spades"] = _floats(sp)
        body["nn_final_objective"] = [float(t[-1]) for t in net.traces]
        body["nn_trace_monotone"] = all(_monotone(t) for t in net.traces)
        artifacts.update(net=net, bank=bank)

    body["methods"] = methods
    body["per_image"] = per_image
    return Report(body, {"stages": tm.stages}, artifacts)


def run_experiment(cfg: ExperimentConfig) -> Report:
    from . import kernels

    kernels.set_threads(None)
    if cfg.scenario == "full-scan":
        return run_full_scan(cfg)
    return run_roi(cfg)


def write_curve_csv(target, curves: dict) -> None:
    """Write ``estimator,index,zeta,snr_db`` rows to a path or text stream."""
    if hasattr(target, "write"):
        _curve_rows(csv.writer(target), curves)
        return
    with open(target, "w", newline="") as fh:
        _curve_rows(csv.writer(fh), curves)


def _curve_rows(w, curves: dict) -> None:
    w.writerow(["estimator", "index", "zeta", "snr_db"])
    for name in sorted(curves):
        for i, (z, q) in enumerate(curves[name]):
            w.writerow([name, i, repr(float(z)), repr(float(q))])


def format_table(report: Report) -> str:
    rows = sorted(report.methods.items(), key=lambda kv: kv[1])
    width = max(len(k) for k, _ in rows)
    lines = [f"{'method':<{width}}  mean SNR [dB]"]
    lines += [f"{k:<{width}}  {v:8.3f}" for k, v in rows]
    return "\n".join(lines) + "\n"
