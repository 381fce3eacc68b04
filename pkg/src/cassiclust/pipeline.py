"""End-to-end runs: codes -> measurements -> SRSSC -> spectral clustering -> scores.

A run directory holds::

    pattern.csv / pattern.json   coding pattern (coded modes only)
    meas.smeas                   simulated measurements (coded modes only)
    affinity.sha256              hex digest of the float64 affinity matrix
    labels.csv                   predicted clusters aligned to ground truth
    map.pgm / map.ppm            rendered cluster map
    metrics.json                 OA / AA / Kappa / per-class / confusion
    timing.json                  wall-clock ms per stage
    run.json                     everything needed to re-run

metrics.json carries no timings so that repeated runs produce identical
bytes; timings live in timing.json.
"""
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
import hashlib
import json
import logging
from pathlib import Path
import platform
from typing import Optional

import numpy as np
import scipy

from . import __version__, io
from .codegen import gp_pattern, random_pattern, score_pattern
from .data import LabelMap, RunConfig
from .errors import ValidationError
from .evaluation import (StageTimer, evaluate, render_cluster_map, time_reduction, timing_report,
                         two_decimals)
from .sensing import NoiseSpec, sense
from .spectral import cluster
from .ssc import SRSSCProblem, build_affinity, solve_srssc
from .synth import synth_cube

log = logging.getLogger(__name__)

CODE_MODES = ("gp", "random", "none")


class StageError(Exception):
    """A pipeline stage failed; ``cause`` holds the original exception."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class SynthParams:
    rows: int = 20
    cols: int = 20
    bands: int = 32
    k: int = 4
    sigma: float = 0.0


@dataclass(frozen=True)
class PipelineSpec:
    out_dir: str
    config: RunConfig = field(default_factory=RunConfig)
    code_mode: str = "gp"
    snapshots: int = 8
    bandwidth: int = 4
    noise_sigma: float = 0.0
    synth: Optional[SynthParams] = None
    cube_path: Optional[str] = None
    labels_path: Optional[str] = None
    crop: Optional[tuple] = None
    classes: Optional[tuple] = None
    normalize: bool = True

    def __post_init__(self):
        if self.code_mode not in CODE_MODES:
            raise ValidationError(f"code mode must be one of {CODE_MODES}, got {self.code_mode!r}")
        if self.code_mode != "none" and (self.snapshots < 1 or self.bandwidth < 1):
            raise ValidationError("coded modes need snapshots >= 1 and bandwidth >= 1")
        if not (np.isfinite(self.noise_sigma) and self.noise_sigma >= 0):
            raise ValidationError("noise sigma must be finite and >= 0")
        if (self.synth is None) == (self.cube_path is None):
            raise ValidationError("give either synth parameters or a cube path")
        if self.cube_path is not None and self.labels_path is None:
            raise ValidationError("a cube input needs a ground-truth labels file")
        if self.crop is not None and len(self.crop) != 4:
            raise ValidationError("crop is (row0, col0, rows, cols)")

    def to_dict(self):
        return {
            "code_mode": self.code_mode,
            "snapshots": self.snapshots if self.code_mode != "none" else None,
            "bandwidth": self.bandwidth if self.code_mode != "none" else None,
            "noise_sigma": self.noise_sigma,
            "synth": asdict(self.synth) if self.synth is not None else None,
            "cube_path": self.cube_path,
            "labels_path": self.labels_path,
            "crop": list(self.crop) if self.crop is not None else None,
            "classes": list(self.classes) if self.classes is not None else None,
            "normalize": self.normalize,
            "config": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, d, out_dir):
        d = dict(d)
        synth = d.pop("synth", None)
        crop = d.pop("crop", None)
        classes = d.pop("classes", None)
        config = RunConfig.from_dict(d.pop("config", {}))
        for key in ("snapshots", "bandwidth"):
            if d.get(key) is None:
                d.pop(key, None)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown pipeline keys: {sorted(unknown)}")
        return cls(out_dir=str(out_dir), config=config,
                   synth=SynthParams(**synth) if synth is not None else None,
                   crop=tuple(crop) if crop is not None else None,
                   classes=tuple(classes) if classes is not None else None, **d)


@dataclass
class PipelineResult:
    out_dir: Path
    metrics: object
    labels: np.ndarray
    converged: bool
    timing: dict
    run: dict


@contextmanager
def _stage(timer, name):
    with timer.stage(name):
        try:
            yield
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc


def affinity_digest(w):
    return hashlib.sha256(np.ascontiguousarray(w, dtype="<f8").tobytes()).hexdigest()


def _write_json(path, obj):
    io._atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _versions():
    return {"cassiclust": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def load_inputs(spec: PipelineSpec):
    """Cube and ground truth for ``spec`` (synthetic or from files)."""
    cfg = spec.config
    if spec.synth is not None:
        s = spec.synth
        return synth_cube(cfg.seed, s.rows, s.cols, s.bands, s.k, s.sigma)
    cube = io.load_cube(spec.cube_path)
    truth = io.load_labels(spec.labels_path, classes=spec.classes)
    if (truth.rows, truth.cols) != (cube.rows, cube.cols):
        raise ValidationError(
            f"labels are {truth.rows}x{truth.cols}, cube is {cube.rows}x{cube.cols}")
    if spec.crop is not None:
        cube = cube.crop(*spec.crop)
        truth = truth.crop(*spec.crop)
    return cube, truth


def run_pipeline(spec: PipelineSpec) -> PipelineResult:
    """Run every stage and write the run directory.

    Raises StageError naming the failing stage; files already written stay.
    A solver that stops at max_iter still produces all artifacts with
    ``converged`` false.
    """
    cfg = spec.config
    out = Path(spec.out_dir)
    timer = StageTimer()
    with _stage(timer, "setup"):
        out.mkdir(parents=True, exist_ok=True)
    run = {"spec": spec.to_dict(), "versions": _versions()}
    _write_json(out / "run.json", run)

    with _stage(timer, "load"):
        cube, truth = load_inputs(spec)
        truth.require_clusterable()
        if cfg.k != truth.n_classes:
            raise ValidationError(f"k={cfg.k} but ground truth has K={truth.n_classes} classes")

    pattern = None
    if spec.code_mode != "none":
        with _stage(timer, "codegen"):
            make = gp_pattern if spec.code_mode == "gp" else random_pattern
            pattern = make(cfg.seed, spec.snapshots, cube.bands, spec.bandwidth)
            io.save_pattern(pattern, out / "pattern.csv")
            score = score_pattern(pattern)
            run["pattern"] = {"digest": pattern.digest().hex(), "score": score.total,
                              "coverage_spread": score.coverage_spread}
        with _stage(timer, "sense"):
            meas = sense(cube, pattern, NoiseSpec(spec.noise_sigma, cfg.seed))
            io.save_measurements(meas, out / "meas.smeas")
            y = np.array(meas.data)
    else:
        y = np.array(cube.signatures())

    with _stage(timer, "ssc"):
        if spec.normalize:
            norms = np.linalg.norm(y, axis=0)
            if (norms == 0).any():
                raise ValidationError(f"pixel {int(np.argmin(norms))} has an all-zero signature")
            y = y / norms
        prob = SRSSCProblem(y, cube.rows, cube.cols, lam=cfg.lambda_, alpha=cfg.alpha,
                            rho=cfg.rho, tol=cfg.tol, max_iter=cfg.max_iter,
                            outer_iters=cfg.outer_iters, lambda_scale=cfg.lambda_scale)
        sol = solve_srssc(prob)
        w = build_affinity(sol)
        digest = affinity_digest(w)
        (out / "affinity.sha256").write_text(digest + "\n")
    run["solver"] = {
        "lambda": sol.lam, "rho": sol.rho, "alpha": sol.alpha, "iterations": sol.iterations,
        "converged": sol.converged, "residual_equality": sol.residual_equality,
        "residual_diag": sol.residual_diag, "residual_affine": sol.residual_affine,
        "affinity_sha256": digest,
    }
    if not sol.converged:
        log.warning("solver did not converge; results are flagged in run.json")

    with _stage(timer, "cluster"):
        assignment = cluster(w, cfg.k, seed=cfg.seed, restarts=cfg.kmeans_restarts)

    with _stage(timer, "evaluate"):
        metrics, aligned = evaluate(assignment.labels, truth.labels, cfg.k)
        pred = LabelMap(cube.rows, cube.cols, aligned)
        io.save_labels(pred, out / "labels.csv")
        render_cluster_map(aligned, cube.rows, cube.cols, out / "map", n_classes=cfg.k)
        _write_json(out / "metrics.json", metrics.to_dict())

    timing = timing_report(timer.ms)
    _write_json(out / "timing.json", timing)
    _write_json(out / "run.json", run)
    return PipelineResult(out, metrics, aligned, sol.converged, timing, run)


def rerun_spec(run_json, out_dir) -> PipelineSpec:
    """Rebuild the PipelineSpec recorded in a run.json, writing to ``out_dir``."""
    run = json.loads(Path(run_json).read_text())
    if "spec" not in run:
        raise ValidationError(f"{run_json}: no 'spec' entry")
    return PipelineSpec.from_dict(run["spec"], out_dir)


def _load_run(d):
    d = Path(d)
    mpath = d / "metrics.json"
    if not mpath.exists():
        raise ValidationError(f"{d}: missing metrics.json")
    metrics = json.loads(mpath.read_text())
    tpath = d / "timing.json"
    timing = json.loads(tpath.read_text()) if tpath.exists() else None
    return metrics, timing


def compare_runs(dir_a, dir_b):
    """Side-by-side OA / AA / Kappa, deltas (a - b), and a's time reduction over b.

    Deltas and reductions are cut to two decimals. The reduction uses
    the total of timing.json; the solver-only reduction is reported too.
    """
    ma, ta = _load_run(dir_a)
    mb, tb = _load_run(dir_b)
    keys = ("oa", "aa", "kappa")
    out = {
        "a": {"dir": str(dir_a), **{k: ma[k] for k in keys}},
        "b": {"dir": str(dir_b), **{k: mb[k] for k in keys}},
        "delta": {k: two_decimals(ma[k] - mb[k]) for k in keys},
    }
    if ta is not None and tb is not None:
        out["time_ms"] = {"a": ta["total_ms"], "b": tb["total_ms"]}
        out["time_reduction_pct"] = two_decimals(time_reduction(ta["total_ms"], tb["total_ms"]))
        sa, sb = ta["stages"].get("ssc"), tb["stages"].get("ssc")
        if sa is not None and sb:
            out["ssc_time_reduction_pct"] = two_decimals(time_reduction(sa, sb))
    return out


def compare_metrics(a, b, time_a=None, time_b=None):
    """compare_runs on in-memory metric dicts (times in any common unit)."""
    keys = ("oa", "aa", "kappa")
    out = {"delta": {k: two_decimals(a[k] - b[k]) for k in keys}}
    if time_a is not None and time_b is not None:
        out["time_reduction_pct"] = two_decimals(time_reduction(time_a, time_b))
    return out
