"""Command line: codegen | sense | cluster | eval | pipeline | synth | compare.

Exit codes: 0 ok, 2 invalid input, 3 solver did not converge (outputs are
still written), 4 I/O failure.
"""
import argparse
from contextlib import nullcontext
import json
import logging
from pathlib import Path
import sys

import numpy as np

from . import __version__, io
from .codegen import gp_pattern, random_pattern, score_pattern
from .data import LabelMap, RunConfig
from .errors import ValidationError
from .evaluation import evaluate, render_cluster_map
from .pipeline import (PipelineSpec, StageError, SynthParams, affinity_digest, compare_runs,
                       rerun_spec, run_pipeline)
from .sensing import NoiseSpec, sense
from .spectral import cluster
from .ssc import SRSSCProblem, build_affinity, solve_srssc
from .synth import synth_cube

log = logging.getLogger("cassiclust")

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED, EXIT_IO = 0, 2, 3, 4

# RunConfig field -> CLI dest
_CONFIG_FLAGS = {
    "seed": "seed", "lambda": "lam", "lambda_scale": "lambda_scale", "alpha": "alpha",
    "rho": "rho", "max_iter": "max_iter", "tol": "tol", "outer_iters": "outer_iters",
    "k": "k", "kmeans_restarts": "kmeans_restarts",
}
_SPEC_FLAGS = {
    "code_mode": "mode", "snapshots": "snapshots", "bandwidth": "bandwidth",
    "noise_sigma": "sigma", "cube_path": "cube", "labels_path": "labels",
    "crop": "crop", "classes": "classes",
}


def _int_list(text, n=None):
    try:
        vals = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} integers, got {len(vals)}")
    return vals


def _crop(text):
    return _int_list(text, 4)


def _u64(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return v


def _solver_flags(p):
    g = p.add_argument_group("solver")
    g.add_argument("--lambda", dest="lam", type=float, help="data weight (default: scale / mu)")
    g.add_argument("--lambda-scale", type=float, help="scale in the default lambda (10)")
    g.add_argument("--alpha", type=float, help="spatial weight; 0 gives plain SSC (default 200)")
    g.add_argument("--rho", type=float, help="ADMM penalty (default 10 * lambda)")
    g.add_argument("--tol", type=float, help="stop when max|a - c| <= tol (1e-4)")
    g.add_argument("--max-iter", type=int, help="ADMM iterations per outer pass (500)")
    g.add_argument("--outer-iters", type=int, help="neighbourhood-mean refreshes (3)")
    g.add_argument("--k", type=int, help="number of clusters")
    g.add_argument("--kmeans-restarts", type=int, help="k-means restarts (20)")
    g.add_argument("--seed", type=_u64)
    g.add_argument("--config", type=Path, help="JSON file of defaults (flags win)")


def _config_from(args, base=None):
    """RunConfig from defaults < JSON config < flags."""
    d = dict(base or {})
    if getattr(args, "config", None) is not None:
        d.update(_read_config(args.config).get("config", {}))
    for key, dest in _CONFIG_FLAGS.items():
        v = getattr(args, dest, None)
        if v is not None:
            d[key] = v
    return RunConfig.from_dict(d)


def _read_config(path):
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg} at offset {exc.pos})") from None
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: expected a JSON object")
    # accept either {"config": {...}, ...} or a flat mix of run-config and pipeline keys
    raw = dict(raw)
    cfg = dict(raw.pop("config", {}))
    for key in list(raw):
        if key in _CONFIG_FLAGS:
            cfg[key] = raw.pop(key)
    raw["config"] = cfg
    return raw


def cmd_codegen(args):
    make = gp_pattern if args.mode == "gp" else random_pattern
    pattern = make(args.seed, args.snapshots, args.bands, args.bandwidth)
    io.save_pattern(pattern, args.out)
    s = score_pattern(pattern)
    log.info("wrote %s (score %d, coverage spread %d)", args.out, s.total, s.coverage_spread)
    return EXIT_OK


def cmd_sense(args):
    cube = io.load_cube(args.cube)
    pattern = io.load_pattern(args.pattern)
    meas = sense(cube, pattern, NoiseSpec(args.sigma, args.seed))
    io.save_measurements(meas, args.out)
    return EXIT_OK


def cmd_synth(args):
    cube, labels = synth_cube(args.seed, args.rows, args.cols, args.bands, args.k, args.sigma)
    io.save_cube(cube, args.out)
    if args.labels is not None:
        io.save_labels(labels, args.labels)
    return EXIT_OK


def _load_signals(path):
    """(y, rows, cols) from an SMEAS1 or SCUBE1 file, chosen by magic."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == io.MEAS_MAGIC:
        meas = io.load_measurements(path)
        return np.array(meas.data), meas.rows, meas.cols
    cube = io.load_cube(path)
    return np.array(cube.signatures()), cube.rows, cube.cols


def cmd_cluster(args):
    cfg = _config_from(args)
    y, rows, cols = _load_signals(args.input)
    if not args.no_normalize:
        norms = np.linalg.norm(y, axis=0)
        if (norms == 0).any():
            raise ValidationError(f"pixel {int(np.argmin(norms))} has an all-zero signature")
        y = y / norms
    sol = solve_srssc(SRSSCProblem(
        y, rows, cols, lam=cfg.lambda_, alpha=cfg.alpha, rho=cfg.rho, tol=cfg.tol,
        max_iter=cfg.max_iter, outer_iters=cfg.outer_iters, lambda_scale=cfg.lambda_scale))
    w = build_affinity(sol)
    assignment = cluster(w, cfg.k, seed=cfg.seed, restarts=cfg.kmeans_restarts)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    io.save_labels(LabelMap(rows, cols, assignment.labels), out / "labels.csv")
    digest = affinity_digest(w)
    (out / "affinity.sha256").write_text(digest + "\n")
    summary = {
        "config": cfg.to_dict(), "input": str(args.input), "lambda": sol.lam, "rho": sol.rho,
        "iterations": sol.iterations, "converged": sol.converged,
        "residual_equality": sol.residual_equality, "residual_diag": sol.residual_diag,
        "residual_affine": sol.residual_affine, "affinity_sha256": digest,
    }
    (out / "solver.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return EXIT_OK if sol.converged else EXIT_NONCONVERGED


def cmd_eval(args):
    pred = io.load_labels(args.pred)
    truth = io.load_labels(args.truth, classes=args.classes, crop=args.crop)
    if (pred.rows, pred.cols) != (truth.rows, truth.cols):
        raise ValidationError(
            f"prediction is {pred.rows}x{pred.cols}, truth is {truth.rows}x{truth.cols}")
    truth.require_clusterable()
    metrics, aligned = evaluate(pred.labels, truth.labels)
    text = json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out is not None:
        io._atomic_write(args.out, text.encode())
    else:
        sys.stdout.write(text)
    if args.map is not None:
        render_cluster_map(aligned, pred.rows, pred.cols, args.map, n_classes=truth.n_classes)
    return EXIT_OK


def _pipeline_spec(args):
    if args.from_run is not None:
        spec = rerun_spec(args.from_run, args.out_dir)
        d = spec.to_dict()
    else:
        d = {}
    if args.config is not None:
        file_cfg = _read_config(args.config)
        d.setdefault("config", {}).update(file_cfg.pop("config"))
        d.update(file_cfg)
    for key, dest in _SPEC_FLAGS.items():
        v = getattr(args, dest, None)
        if v is not None:
            d[key] = v
    synth = {} if d.get("synth") is None else dict(d["synth"])
    for key in ("rows", "cols", "bands"):
        v = getattr(args, key)
        if v is not None:
            synth[key] = v
    if args.synth_k is not None:
        synth["k"] = args.synth_k
    if args.synth_sigma is not None:
        synth["sigma"] = args.synth_sigma
    if d.get("cube_path") is None:
        d["synth"] = asdict_synth(synth)
    else:
        d["synth"] = None
    cfg = dict(d.get("config", {}))
    for key, dest in _CONFIG_FLAGS.items():
        v = getattr(args, dest, None)
        if v is not None:
            cfg[key] = v
    if "k" not in cfg:
        cfg["k"] = _truth_classes(d)
    d["config"] = cfg
    if args.no_normalize:
        d["normalize"] = False
    for key in ("crop", "classes"):
        if d.get(key) is not None:
            d[key] = list(d[key])
    return PipelineSpec.from_dict(d, args.out_dir)


def asdict_synth(synth):
    p = SynthParams(**synth)
    return {"rows": p.rows, "cols": p.cols, "bands": p.bands, "k": p.k, "sigma": p.sigma}


def _truth_classes(d):
    """Cluster count taken from the ground truth the run will score against."""
    if d.get("synth") is not None:
        return d["synth"]["k"]
    if d.get("classes") is not None:
        return len(d["classes"])
    if d.get("labels_path") is None:
        raise ValidationError("a cube input needs --labels")
    crop = tuple(d["crop"]) if d.get("crop") is not None else None
    return max(io.load_labels(d["labels_path"], crop=crop).n_classes, 1)


def cmd_pipeline(args):
    spec = _pipeline_spec(args)
    res = run_pipeline(spec)
    m = res.metrics
    log.info("OA %.2f  AA %.2f  Kappa %.2f  (%s)", m.oa, m.aa, m.kappa, res.out_dir)
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def cmd_compare(args):
    text = json.dumps(compare_runs(args.dir_a, args.dir_b), indent=2, sort_keys=True) + "\n"
    if args.out is not None:
        io._atomic_write(args.out, text.encode())
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="cassiclust", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--serial", action="store_true",
                   help="single-threaded BLAS for byte-exact comparisons")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("codegen", help="design a coding pattern")
    c.add_argument("--mode", choices=("random", "gp"), default="gp")
    c.add_argument("--snapshots", type=int, required=True)
    c.add_argument("--bands", type=int, required=True)
    c.add_argument("--bandwidth", type=int, required=True)
    c.add_argument("--seed", type=_u64, default=0)
    c.add_argument("--out", type=Path, required=True)
    c.set_defaults(func=cmd_codegen)

    s = sub.add_parser("sense", help="simulate coded measurements of a cube")
    s.add_argument("--cube", type=Path, required=True)
    s.add_argument("--pattern", type=Path, required=True)
    s.add_argument("--sigma", type=float, default=0.0)
    s.add_argument("--seed", type=_u64, default=0)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=cmd_sense)

    y = sub.add_parser("synth", help="write a synthetic union-of-subspaces cube")
    y.add_argument("--rows", type=int, default=20)
    y.add_argument("--cols", type=int, default=20)
    y.add_argument("--bands", type=int, default=32)
    y.add_argument("--k", type=int, default=4)
    y.add_argument("--sigma", type=float, default=0.0)
    y.add_argument("--seed", type=_u64, default=0)
    y.add_argument("--out", type=Path, required=True)
    y.add_argument("--labels", type=Path, help="ground-truth CSV")
    y.set_defaults(func=cmd_synth)

    k = sub.add_parser("cluster", help="cluster an SMEAS1 or SCUBE1 file")
    k.add_argument("--input", type=Path, required=True)
    k.add_argument("--out-dir", type=Path, required=True)
    k.add_argument("--no-normalize", action="store_true",
                   help="skip scaling each pixel signature to unit norm")
    _solver_flags(k)
    k.set_defaults(func=cmd_cluster)

    e = sub.add_parser("eval", help="score a predicted label map")
    e.add_argument("--pred", type=Path, required=True)
    e.add_argument("--truth", type=Path, required=True)
    e.add_argument("--classes", type=_int_list,
                   help="keep these ground-truth classes, renumbered 1..n (e.g. 2,7,10,11)")
    e.add_argument("--crop", type=_crop, help="row0,col0,rows,cols window of the truth map")
    e.add_argument("--out", type=Path)
    e.add_argument("--map", type=Path, help="prefix for aligned .pgm/.ppm cluster maps")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("pipeline", help="codes -> sense -> SRSSC -> cluster -> metrics")
    r.add_argument("--out-dir", type=Path, required=True)
    r.add_argument("--from-run", type=Path, help="re-run the settings stored in a run.json")
    r.add_argument("--mode", choices=("gp", "random", "none"))
    r.add_argument("--snapshots", type=int)
    r.add_argument("--bandwidth", type=int)
    r.add_argument("--sigma", type=float, help="measurement noise std")
    r.add_argument("--cube", type=str, help="SCUBE1 input instead of a synthetic scene")
    r.add_argument("--labels", type=str, help="ground-truth CSV for --cube")
    r.add_argument("--crop", type=_crop, help="row0,col0,rows,cols window")
    r.add_argument("--classes", type=_int_list, help="ground-truth classes to keep")
    r.add_argument("--rows", type=int, help="synthetic scene rows (20)")
    r.add_argument("--cols", type=int, help="synthetic scene cols (20)")
    r.add_argument("--bands", type=int, help="synthetic scene bands (32)")
    r.add_argument("--synth-k", type=int, help="synthetic class count (4)")
    r.add_argument("--synth-sigma", type=float, help="synthetic cube noise std (0)")
    r.add_argument("--no-normalize", action="store_true")
    _solver_flags(r)
    r.set_defaults(func=cmd_pipeline)

    m = sub.add_parser("compare", help="compare two pipeline run directories")
    m.add_argument("dir_a", type=Path)
    m.add_argument("dir_b", type=Path)
    m.add_argument("--out", type=Path)
    m.set_defaults(func=cmd_compare)
    return p


def _exit_code(exc):
    if isinstance(exc, StageError):
        exc = exc.cause
    if isinstance(exc, ValidationError):
        return EXIT_INVALID
    if isinstance(exc, OSError):
        return EXIT_IO
    return None


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.serial:
        from threadpoolctl import threadpool_limits
        guard = threadpool_limits(limits=1)
    else:
        guard = nullcontext()
    try:
        with guard:
            return args.func(args)
    except Exception as exc:
        code = _exit_code(exc)
        if code is None:
            raise
        print(f"cassiclust {args.command}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
