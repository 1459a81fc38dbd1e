"""Command-line front end.

Containers are read from a positional path (``-`` or omitted: stdin) and
written to ``-o`` (default stdout), so commands can be piped::

    spadesct phantom-gen --size 64 --seed 7 | spadesct project | spadesct fbp --filter ramlak -o f.img

Exit codes: 0 success, 2 usage error, 3 I/O or parse error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


def _threads(args) -> int | None:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("CT_SPADES_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"CT_SPADES_THREADS must be an integer, got {env!r}") from None
    return None


def _src(path):
    return sys.stdin if path in (None, "-") else path


def _dst(path):
    return sys.stdout if path in (None, "-") else path


def _say(args, msg: str) -> None:
    # keep stdout clean when it carries a container
    stream = sys.stderr if getattr(args, "output", None) in (None, "-") else sys.stdout
    print(msg, file=stream)


def _geometry(args, image_size: int):
    from .core import ScanGeometry

    n_bins = args.bins if args.bins else int(round(1.5 * image_size)) - 1
    return ScanGeometry(args.angles, n_bins, image_size, args.support_radius)


def _schedule(spec: str):
    from .fbp import CutoffSchedule

    try:
        p, q0, q1, count = spec.split(",")
        return CutoffSchedule.geometric(float(p), float(q0), float(q1), int(count))
    except ValueError as exc:
        raise UsageError(f"bad schedule {spec!r} (expected p,q_first,q_last,count): {exc}") from None


def _load_bank(args, geo, op):
    """Estimator bank from ``--fbp-schedule`` or ``--afbp`` files (T_o first)."""
    from . import afbp as A
    from . import io
    from .fbp import FBPReconstructor

    if args.afbp:
        banks = [io.read_kernels(p) for p in args.afbp]
        for b in banks:
            if b.geometry != geo:
                raise UsageError("AFBP bank geometry does not match the sinograms")
        return [A.AFBPReconstructor(b, op, truncate=True) for b in banks], banks[0].roi
    if not args.fbp_schedule:
        raise UsageError("one of --fbp-schedule or --afbp is required")
    return [FBPReconstructor(op, f) for f in _schedule(args.fbp_schedule).filters(geo)], None


# -------------------------------------------------------------------- commands

def cmd_phantom_gen(args):
    from . import io
    from .core import Rng
    from .phantoms import PhantomConfig, random_ellipses, rasterize, write_ellipses

    cfg = PhantomConfig(image_size=args.size, seed=args.seed)
    base = Rng(args.seed)
    specs = [random_ellipses(cfg, base.child(i)) for i in range(args.count)]
    imgs = np.array([rasterize(s, args.size) for s in specs])
    io.write_image(_dst(args.output), imgs if args.count > 1 else imgs[0])
    if args.ellipses:
        write_ellipses(args.ellipses, [e for s in specs for e in s])


def cmd_project(args):
    from . import io
    from .radon import RadonOperator

    f = io.read_image(_src(args.input))
    geo = _geometry(args, f.shape[-1])
    io.write_sinogram(_dst(args.output), RadonOperator(geo).project(f), geo)


def cmd_noise(args):
    from . import io
    from .core import Rng
    from .noisesim import ScanProtocol, calibrate_scale, counts_to_sinogram, expected_counts, sample_counts

    g, geo = io.read_sinogram(_src(args.input))
    if args.scale:
        prot = ScanProtocol(args.intensity, args.min_count, args.scale)
    else:
        prot = calibrate_scale(g, args.intensity, args.min_count)
    stack = g.reshape((-1,) + geo.sinogram_shape)
    rng = Rng(args.seed)
    y = np.array([sample_counts(expected_counts(x, prot), rng.child(i)) for i, x in enumerate(stack)], dtype=np.float64)
    y = y.reshape(g.shape)
    if args.counts:
        io.write_counts(args.counts, y, geo, prot)
    io.write_sinogram(_dst(args.output), counts_to_sinogram(y, prot), geo)


def _filter(args, geo):
    from .fbp import butterworth_apodize, ramlak_filter

    base = ramlak_filter(geo)
    if args.filter == "ramlak":
        return base
    return butterworth_apodize(base, args.p, args.q)


def cmd_fbp(args):
    from . import io
    from .fbp import FBPReconstructor, measured_band
    from .radon import RadonOperator

    g, geo = io.read_sinogram(_src(args.input))
    band = measured_band(geo, args.complete_radius) if args.complete_radius else None
    f = FBPReconstructor(RadonOperator(geo), _filter(args, geo), completion_band=band)(g)
    io.write_image(_dst(args.output), f)
    _report_snr(args, f)


def _report_snr(args, f, mask=None):
    if not getattr(args, "reference", None):
        return
    from . import io
    from .evaluate import snr

    ref = io.read_image(args.reference)
    if ref.shape != f.shape:
        raise UsageError(f"reference shape {ref.shape} differs from output {f.shape}")
    refs, outs = ref.reshape((-1,) + ref.shape[-2:]), f.reshape((-1,) + f.shape[-2:])
    vals = [snr(a, b, mask) for a, b in zip(refs, outs)]
    _say(args, f"snr_db={np.mean(vals):.6f}")


def cmd_complete(args):
    from . import io
    from .fbp import complete_sinogram, measured_band

    g, geo = io.read_sinogram(_src(args.input))
    io.write_sinogram(_dst(args.output), complete_sinogram(g, measured_band(geo, args.measurement_radius)), geo)


def _legone_bank(args, geo, op):
    from .fbp import FBPReconstructor

    return [FBPReconstructor(op, f) for f in _schedule(args.schedule).filters(geo)]


def cmd_legone_calibrate(args):
    from . import io
    from .core import Rng
    from .legone import calibrate_confidence
    from .noisesim import calibrate_scale
    from .radon import RadonOperator

    train = io.read_image(args.train)
    train = train.reshape((-1,) + train.shape[-2:])
    geo = _geometry(args, train.shape[-1])
    op = RadonOperator(geo)
    prot = calibrate_scale(op.project(train), args.intensity, args.min_count)
    bank = _legone_bank(args, geo, op)
    kappas = [float(v) for v in args.kappas.split(",")]
    qs = [float(v) for v in args.qs.split(",")]
    params, maps = calibrate_confidence(train, bank, prot, op, Rng(args.seed), kappas, qs, n_instances=args.instances)
    if args.maps:
        io.write_image(args.maps, maps.maps)
    out = {"kappa": params.kappa, "q": params.q, "schedule": args.schedule, "n_instances": maps.n_instances,
           "protocol": prot.to_dict()}
    text = io.to_json(out)
    if args.output in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.output, "w") as fh:
            fh.write(text)


def cmd_legone(args):
    from . import io
    from .legone import ConfidenceParams, VarianceMaps, legone_fuse, stochastic_bounds
    from .radon import RadonOperator

    g, geo = io.read_sinogram(_src(args.input))
    with open(args.params) as fh:
        params = json.load(fh)
    op = RadonOperator(geo)
    args.schedule = params["schedule"]
    bank = _legone_bank(args, geo, op)
    maps = VarianceMaps(io.read_image(args.maps).reshape((len(bank),) + geo.image_shape), int(params["n_instances"]))
    rho = stochastic_bounds(maps, ConfidenceParams(params["kappa"], params["q"]))
    stack = g.reshape((-1,) + geo.sinogram_shape)
    fused = np.array([legone_fuse(np.stack([rec(x) for rec in bank]), rho)[0] for x in stack]).reshape(g.shape[:-2] + geo.image_shape)
    io.write_image(_dst(args.output), fused)
    _report_snr(args, fused)


def cmd_afbp_train(args):
    from . import afbp as A
    from . import io
    from .core import Rng, RoiSpec
    from .fbp import butterworth_apodize, ramlak_filter
    from .noisesim import calibrate_scale, noisy_sinogram
    from .radon import RadonOperator

    train = io.read_image(args.train)
    train = train.reshape((-1,) + train.shape[-2:])
    geo = _geometry(args, train.shape[-1])
    op = RadonOperator(geo)
    roi = RoiSpec(args.roi_radius, args.measurement_radius)
    roi.validate(geo)
    base = butterworth_apodize(ramlak_filter(geo), args.base_p, args.base_q)
    init = A.init_bank(geo, roi, args.segments, args.angle_extent, args.bin_extent, args.image_kernel, base)
    run = A.TrainingRun(alternations=args.alternations, cg_iters_sino=args.cg_iters, cg_iters_image=args.cg_iters, tol=args.tol)
    if args.objective == "quality":
        if args.seed is None:
            raise UsageError("--seed is required for the quality objective (noise simulation)")
        prot = calibrate_scale(op.project(train), args.intensity, args.min_count)
        clean = op.project(train)
        rng = Rng(args.seed)
        sinos = np.array([noisy_sinogram(clean[i], prot, rng.child(i, j)) for i in range(len(train)) for j in range(args.instances)])
        bank = A.train_afbp_quality(A.truncate_projections(sinos, roi, geo), np.repeat(train, args.instances, axis=0), roi, init, run, op)
    else:
        bank = A.train_afbp_blur(train, args.sigma, roi, init, run, op)
    io.write_kernels(_dst(args.output), bank)
    if args.sidecar:
        side = {"objective": run.objective, "sigma": run.sigma, "trace": [float(v) for v in run.trace],
                "steps": run.steps, "tag": bank.tag, "roi": bank.roi.to_dict(), "geometry": geo.to_dict(),
                "segments": bank.segments.tolist()}
        io.write_sidecar(args.sidecar, side)


def cmd_afbp(args):
    from . import afbp as A
    from . import io
    from .core import roi_pixel_mask
    from .radon import RadonOperator

    g, geo = io.read_sinogram(_src(args.input))
    bank = io.read_kernels(args.bank)
    if bank.geometry != geo:
        raise UsageError("kernel bank geometry does not match the sinogram")
    f = A.AFBPReconstructor(bank, RadonOperator(geo), truncate=not args.no_truncate)(g)
    if args.mask:
        f = f * roi_pixel_mask(bank.roi, geo)
    io.write_image(_dst(args.output), f)
    _report_snr(args, f, roi_pixel_mask(bank.roi, geo))


def cmd_blur_measure(args):
    from . import afbp as A
    from . import io
    from .core import RoiSpec, ScanGeometry, roi_pixel_mask

    outs = io.read_image(args.outputs)
    refs = io.read_image(args.references)
    outs = outs.reshape((-1,) + outs.shape[-2:])
    refs = refs.reshape((-1,) + refs.shape[-2:])
    if outs.shape != refs.shape:
        raise UsageError(f"outputs {outs.shape} and references {refs.shape} differ in shape")
    mask = None
    if args.roi_radius:
        n = refs.shape[-1]
        mask = roi_pixel_mask(RoiSpec(args.roi_radius, args.roi_radius), ScanGeometry(1, 1, n))
        outs = outs * mask
    print(f"{A.blur_measure(list(zip(outs, refs)), mask):.6f}")


def cmd_nn_train(args):
    from . import io
    from .core import Rng, roi_pixel_mask
    from .evaluate import snr
    from .nnfusion import FeatureLayout, OptimizerConfig, build_training_batch, train_net
    from .radon import RadonOperator

    train = io.read_image(args.train)
    train = train.reshape((-1,) + train.shape[-2:])
    g, geo = io.read_sinogram(args.sinograms)
    g = g.reshape((-1,) + geo.sinogram_shape)
    if len(g) != len(train):
        raise UsageError("need one training sinogram per reference image")
    op = RadonOperator(geo)
    bank, roi = _load_bank(args, geo, op)
    stacks = np.stack([rec(g) for rec in bank], axis=1)
    mask = roi_pixel_mask(roi, geo) if roi is not None else None
    if roi is not None:
        best = 0
    else:
        scores = [np.mean([snr(f, st[i]) for f, st in zip(train, stacks)]) for i in range(len(bank))]
        best = int(np.argmax(scores))
    layout = FeatureLayout(len(bank), best)
    region = train[0].size if mask is None else int(mask.sum())
    root = Rng(args.seed)
    batch = build_training_batch(train, stacks, layout, min(args.samples, region) * len(train), root.child(5), mask=mask)
    net = train_net(batch, args.neurons, OptimizerConfig(args.restarts, args.max_iter), root.child(6))
    net.layout = layout
    net.tags = tuple(rec.tag for rec in bank)
    io.write_network(_dst(args.output), net)
    if args.sidecar:
        io.write_sidecar(args.sidecar, {"layout": layout.to_dict(), "tags": list(net.tags),
                                        "traces": [[float(v) for v in t] for t in net.traces]})


def cmd_spades(args):
    from . import io
    from .core import roi_pixel_mask
    from .nnfusion import spades_reconstruct
    from .radon import RadonOperator

    g, geo = io.read_sinogram(_src(args.input))
    net = io.read_network(args.net)
    op = RadonOperator(geo)
    bank, roi = _load_bank(args, geo, op)
    mask = roi_pixel_mask(roi, geo) if roi is not None else None
    stack = g.reshape((-1,) + geo.sinogram_shape)
    out = np.array([spades_reconstruct(x, bank, net, mask=mask) for x in stack]).reshape(g.shape[:-2] + geo.image_shape)
    io.write_image(_dst(args.output), out)
    _report_snr(args, out, mask)


def cmd_pl(args):
    from . import io
    from .iterative import PLConfig, pl_reconstruct, write_trace_csv
    from .radon import RadonOperator

    y, geo, prot = io.read_counts(_src(args.input))
    if y.ndim != 2:
        raise UsageError("pl reconstructs a single counts sinogram")
    res = pl_reconstruct(y, PLConfig(args.beta, args.delta, args.iters, init=args.init), prot, RadonOperator(geo))
    io.write_image(_dst(args.output), res.image)
    if args.trace:
        write_trace_csv(args.trace, res.trace)
    _report_snr(args, res.image)


def _experiment_config(args, scenario=None):
    from .evaluate import ExperimentConfig

    d = {}
    if args.config:
        with open(args.config) as fh:
            d = json.load(fh)
    if scenario and "scenario" not in d:
        d["scenario"] = scenario
    if args.seed is not None:
        d["seed"] = args.seed
    return ExperimentConfig.from_dict(d)


def cmd_eval(args):
    from . import io
    from .evaluate import format_table, run_experiment

    rep = run_experiment(_experiment_config(args))
    text = rep.to_json()
    if args.output in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.output, "w") as fh:
            fh.write(text)
    if args.table:
        sys.stderr.write(format_table(rep))
    if args.timings:
        io.write_sidecar(args.timings, rep.runtime)


def cmd_curve(args):
    import dataclasses

    from .evaluate import run_roi, write_curve_csv

    cfg = dataclasses.replace(_experiment_config(args, "roi"), spades=False)
    if cfg.scenario != "roi":
        raise UsageError("curve needs an roi config")
    rep = run_roi(cfg)
    curves = rep.body["curves"]
    write_curve_csv(sys.stdout if args.output in (None, "-") else args.output, curves)


# --------------------------------------------------------------------- parser

FORMAT_NOTE = (
    "Containers: CTIMG1 images, CTSIN1 sinograms, CTCNT1 photon counts, AFBPK1 kernel banks, "
    "SPNN1 networks (little-endian float64 payloads)."
)


def _add_io(p, input_kind: str | None, output_kind: str | None):
    if input_kind:
        p.add_argument("input", nargs="?", default="-", help=f"input {input_kind} (default: stdin)")
    if output_kind:
        p.add_argument("-o", "--output", default="-", help=f"output {output_kind} (default: stdout)")


def _add_geometry(p):
    p.add_argument("--angles", type=int, default=90, help="number of projection angles over [0, pi)")
    p.add_argument("--bins", type=int, default=None, help="bins per projection (default: 1.5*size - 1)")
    p.add_argument("--support-radius", type=float, default=None, help="bin range radius (default: size/2)")


def _add_protocol(p):
    p.add_argument("--intensity", type=float, default=1200.0, help="source intensity I0")
    p.add_argument("--min-count", type=float, default=60.0, help="expected count at the most attenuated ray")


def _add_bank(p):
    p.add_argument("--fbp-schedule", help="full-scan FBP bank as p,q_first,q_last,count")
    p.add_argument("--afbp", nargs="+", help="AFBPK1 banks for ROI mode, T_o first")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spadesct", description=__doc__.split("\n")[0], epilog=FORMAT_NOTE)
    parser.add_argument("--threads", type=int, default=None, help="worker threads (env CT_SPADES_THREADS)")
    parser.add_argument("--config", default=None, help="JSON file of flag defaults (eval/curve: experiment config)")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=help_, epilog=FORMAT_NOTE)
        p.set_defaults(func=func)
        p.add_argument("--config", default=argparse.SUPPRESS,
                       help="experiment config (eval/curve) or JSON of flag defaults")
        return p

    p = add("phantom-gen", cmd_phantom_gen, "random ellipse phantoms (CTIMG1)")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--ellipses", help="also write the ellipse table (text)")
    _add_io(p, None, "CTIMG1")

    p = add("project", cmd_project, "forward projection of an image (CTIMG1 -> CTSIN1)")
    _add_geometry(p)
    _add_io(p, "CTIMG1", "CTSIN1")

    p = add("noise", cmd_noise, "Poisson scan simulation (CTSIN1 -> CTSIN1, optional CTCNT1)")
    _add_protocol(p)
    p.add_argument("--scale", type=float, default=None, help="fixed scale (default: calibrate on the input)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--counts", help="also write the photon counts (CTCNT1)")
    _add_io(p, "CTSIN1", "CTSIN1")

    p = add("fbp", cmd_fbp, "filtered back-projection (CTSIN1 -> CTIMG1)")
    p.add_argument("--filter", choices=("ramlak", "butterworth"), default="ramlak")
    p.add_argument("--p", type=float, default=2.0, help="Butterworth order")
    p.add_argument("--q", type=float, default=0.6, help="Butterworth cutoff as a fraction of Nyquist")
    p.add_argument("--complete-radius", type=float, default=None, help="complete bins beyond this radius first")
    p.add_argument("--reference", help="reference image; prints snr_db")
    _add_io(p, "CTSIN1", "CTIMG1")

    p = add("complete", cmd_complete, "replicate the band edges of a truncated sinogram")
    p.add_argument("--measurement-radius", type=float, required=True)
    _add_io(p, "CTSIN1", "CTSIN1")

    p = add("legone-calibrate", cmd_legone_calibrate, "fit (kappa, q) and variance maps on a training stack")
    p.add_argument("--train", required=True, help="training images (CTIMG1 stack)")
    p.add_argument("--schedule", default="4,1.2,0.15,16", help="FBP schedule p,q_first,q_last,count")
    p.add_argument("--kappas", default="0.25,0.5,1,2,4")
    p.add_argument("--qs", default="0.5,1,1.5,2")
    p.add_argument("--instances", type=int, default=32, help="noise instances per variance map")
    p.add_argument("--maps", help="write variance maps (CTIMG1 stack)")
    p.add_argument("--seed", type=int, required=True)
    _add_geometry(p)
    _add_protocol(p)
    _add_io(p, None, "JSON parameters")

    p = add("legone", cmd_legone, "confidence-interval switch fusion (CTSIN1 -> CTIMG1)")
    p.add_argument("--params", required=True, help="JSON from legone-calibrate")
    p.add_argument("--maps", required=True, help="variance maps from legone-calibrate")
    p.add_argument("--reference", help="reference image; prints snr_db")
    _add_io(p, "CTSIN1", "CTIMG1")

    p = add("afbp-train", cmd_afbp_train, "train an AFBP kernel bank (AFBPK1)")
    p.add_argument("--train", required=True, help="training images (CTIMG1 stack)")
    p.add_argument("--objective", choices=("quality", "blur"), default="quality")
    p.add_argument("--sigma", type=float, default=0.0, help="Gaussian target width (blur objective)")
    p.add_argument("--roi-radius", type=float, required=True)
    p.add_argument("--measurement-radius", type=float, default=None)
    p.add_argument("--segments", type=int, default=5)
    p.add_argument("--angle-extent", type=int, default=5)
    p.add_argument("--bin-extent", type=int, default=None)
    p.add_argument("--image-kernel", type=int, default=None)
    p.add_argument("--base-p", type=float, default=2.0)
    p.add_argument("--base-q", type=float, default=0.6)
    p.add_argument("--instances", type=int, default=4, help="noise instances per image (quality objective)")
    p.add_argument("--alternations", type=int, default=3)
    p.add_argument("--cg-iters", type=int, default=150)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sidecar", help="write hyperparameters and objective trace (JSON)")
    _add_geometry(p)
    _add_protocol(p)
    _add_io(p, None, "AFBPK1")

    p = add("afbp", cmd_afbp, "apply an AFBP kernel bank (CTSIN1 -> CTIMG1)")
    p.add_argument("--bank", required=True)
    p.add_argument("--no-truncate", action="store_true", help="input is already truncated")
    p.add_argument("--mask", action="store_true", help="zero the output outside the ROI")
    p.add_argument("--reference", help="reference image; prints ROI snr_db")
    _add_io(p, "CTSIN1", "CTIMG1")

    p = add("blur-measure", cmd_blur_measure, "Gaussian-equivalent blur of reconstructions vs references")
    p.add_argument("--outputs", required=True, help="reconstructions of noiseless data (CTIMG1)")
    p.add_argument("--references", required=True, help="matching references (CTIMG1)")
    p.add_argument("--roi-radius", type=float, default=None, help="restrict to a central disk")

    p = add("nn-train", cmd_nn_train, "train the SPADES fusion network (SPNN1)")
    p.add_argument("--train", required=True, help="reference images (CTIMG1 stack)")
    p.add_argument("--sinograms", required=True, help="their noisy sinograms (CTSIN1 stack)")
    _add_bank(p)
    p.add_argument("--neurons", type=int, default=24)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--samples", type=int, default=1600, help="sampled pixels per image")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--sidecar", help="write layout, tags and traces (JSON)")
    _add_io(p, None, "SPNN1")

    p = add("spades", cmd_spades, "SPADES reconstruction (CTSIN1 -> CTIMG1)")
    p.add_argument("--net", required=True)
    _add_bank(p)
    p.add_argument("--reference", help="reference image; prints snr_db")
    _add_io(p, "CTSIN1", "CTIMG1")

    p = add("pl", cmd_pl, "penalized-likelihood reconstruction (CTCNT1 -> CTIMG1)")
    p.add_argument("--beta", type=float, default=100.0)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--init", choices=("zero", "fbp"), default="fbp")
    p.add_argument("--trace", help="write the objective trace (CSV)")
    p.add_argument("--reference", help="reference image; prints snr_db")
    _add_io(p, "CTCNT1", "CTIMG1")

    p = add("eval", cmd_eval, "run an experiment config and emit report.json")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--table", action="store_true", help="print a summary table to stderr")
    p.add_argument("--timings", help="write stage timings (JSON)")
    _add_io(p, None, "report JSON")

    p = add("curve", cmd_curve, "quality-vs-blur curves of an roi config (CSV)")
    p.add_argument("--seed", type=int, default=None)
    _add_io(p, None, "CSV")
    return parser


def _apply_config_defaults(parser, argv):
    """Load ``--config`` as flag defaults for the chosen subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    cmd = next((a for a in rest if not a.startswith("-")), None)
    if cmd in (None, "eval", "curve"):
        return
    with open(known.config) as fh:
        values = json.load(fh)
    if not isinstance(values, dict):
        raise UsageError("--config must hold a JSON object")
    sub = parser._subparsers._group_actions[0].choices.get(cmd)
    if sub is None:
        return
    dests = {a.dest for a in sub._actions}
    norm = {k.replace("-", "_"): v for k, v in values.items()}
    unknown = sorted(set(norm) - dests)
    if unknown:
        raise UsageError(f"unknown config keys for {cmd}: {', '.join(unknown)}")
    sub.set_defaults(**norm)
    for action in sub._actions:
        if action.dest in norm:
            action.required = False


def main(argv=None) -> int:
    from . import kernels
    from .core import DegenerateInputError, ShapeError
    from .io import FormatError

    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_defaults(parser, argv)
    except UsageError as exc:
        print(f"spadesct: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, json.JSONDecodeError) as exc:
        print(f"spadesct: error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        kernels.set_threads(_threads(args))
        args.func(args)
    except UsageError as exc:
        print(f"spadesct: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"spadesct: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (DegenerateInputError, FloatingPointError, np.linalg.LinAlgError, RuntimeError, ArithmeticError) as exc:
        print(f"spadesct: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ShapeError, ValueError) as exc:
        print(f"spadesct: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
