"""Domain types shared by every stage.

All containers are frozen dataclasses holding read-only numpy arrays and
validate their invariants on construction.
"""
from dataclasses import dataclass
import hashlib
from typing import Optional

import numpy as np

from .errors import ValidationError


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SpectralCube:
    """M x N x L datacube stored pixel-major (L contiguous values per pixel)."""

    rows: int
    cols: int
    bands: int
    values: np.ndarray

    def __post_init__(self):
        for name in ("rows", "cols", "bands"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValidationError(f"{name} must be a positive integer, got {v}")
        vals = _frozen(np.ravel(self.values), np.float64)
        if vals.size != self.rows * self.cols * self.bands:
            raise ValidationError(
                f"cube payload has {vals.size} values, expected "
                f"{self.rows}*{self.cols}*{self.bands}")
        bad = ~np.isfinite(vals)
        if bad.any():
            raise ValidationError(f"non-finite cube value at index {int(np.argmax(bad))}")
        if (vals < 0).any():
            raise ValidationError(f"negative cube value at index {int(np.argmax(vals < 0))}")
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 3:
            raise ValidationError("expected an (M, N, L) array")
        return cls(arr.shape[0], arr.shape[1], arr.shape[2], arr.ravel())

    @property
    def pixels(self):
        return self.rows * self.cols

    def as_array(self):
        return self.values.reshape(self.rows, self.cols, self.bands)

    def signatures(self):
        """L x MN matrix whose column j is the spectrum of pixel j."""
        return self.values.reshape(self.pixels, self.bands).T

    def crop(self, row0, col0, rows, cols):
        if row0 < 0 or col0 < 0 or row0 + rows > self.rows or col0 + cols > self.cols:
            raise ValidationError(
                f"crop ({row0},{col0},{rows},{cols}) outside {self.rows}x{self.cols} cube")
        return SpectralCube.from_array(self.as_array()[row0:row0 + rows, col0:col0 + cols])


@dataclass(frozen=True)
class LabelMap:
    """Ground truth (or predicted) labels; 0 marks an unlabeled pixel."""

    rows: int
    cols: int
    labels: np.ndarray

    def __post_init__(self):
        lab = _frozen(np.ravel(self.labels), np.int64)
        if lab.size != self.rows * self.cols:
            raise ValidationError(
                f"label map has {lab.size} entries, expected {self.rows}*{self.cols}")
        if (lab < 0).any():
            raise ValidationError("labels must be nonnegative")
        object.__setattr__(self, "labels", lab)

    @property
    def n_classes(self):
        return int(self.labels.max()) if self.labels.size else 0

    def as_array(self):
        return self.labels.reshape(self.rows, self.cols)

    def require_clusterable(self):
        if self.n_classes < 2:
            raise ValidationError(f"clustering needs at least 2 classes, labels have K={self.n_classes}")
        present = np.unique(self.labels[self.labels > 0])
        if present.size != self.n_classes:
            missing = sorted(set(range(1, self.n_classes + 1)) - set(present.tolist()))
            raise ValidationError(f"classes {missing} have no labeled pixels")

    def crop(self, row0, col0, rows, cols):
        if row0 < 0 or col0 < 0 or row0 + rows > self.rows or col0 + cols > self.cols:
            raise ValidationError(
                f"crop ({row0},{col0},{rows},{cols}) outside {self.rows}x{self.cols} map")
        return LabelMap(rows, cols, self.as_array()[row0:row0 + rows, col0:col0 + cols])

    def remap(self, classes):
        """Keep only ``classes`` (in the given order, renumbered 1..len); others become 0."""
        out = np.zeros_like(self.labels)
        for new, old in enumerate(classes, start=1):
            out[self.labels == old] = new
        return LabelMap(self.rows, self.cols, out)


@dataclass(frozen=True)
class CodingPattern:
    """Binary S x L coding matrix with one contiguous band window per snapshot."""

    entries: np.ndarray
    lambda1: np.ndarray
    lambda2: np.ndarray
    bandwidth: int

    def __post_init__(self):
        h = np.asarray(self.entries)
        if h.ndim != 2 or h.shape[0] < 1 or h.shape[1] < 1:
            raise ValidationError("pattern must be a nonempty 2-D matrix")
        if not np.isin(h, (0, 1)).all():
            raise ValidationError("pattern entries must be 0 or 1")
        h = _frozen(h, np.uint8)
        S, L = h.shape
        lo = _frozen(np.ravel(self.lambda1), np.int64)
        hi = _frozen(np.ravel(self.lambda2), np.int64)
        bw = self.bandwidth
        if int(bw) != bw or not 1 <= bw <= L:
            raise ValidationError(f"bandwidth must be in 1..{L}, got {bw}")
        if lo.size != S or hi.size != S:
            raise ValidationError("one window per snapshot required")
        for s in range(S):
            if not (0 <= lo[s] <= hi[s] <= L - 1) or hi[s] - lo[s] != bw - 1:
                raise ValidationError(f"snapshot {s}: window [{lo[s]}, {hi[s]}] invalid for bandwidth {bw}")
            outside = np.r_[h[s, :lo[s]], h[s, hi[s] + 1:]]
            if outside.any():
                raise ValidationError(f"snapshot {s}: nonzero entry outside its window")
            if not h[s].any():
                raise ValidationError(f"snapshot {s}: all-zero row")
        if np.unique(h, axis=0).shape[0] != S:
            raise ValidationError("pattern has duplicate rows")
        object.__setattr__(self, "entries", h)
        object.__setattr__(self, "lambda1", lo)
        object.__setattr__(self, "lambda2", hi)
        object.__setattr__(self, "bandwidth", int(bw))

    @property
    def snapshots(self):
        return self.entries.shape[0]

    @property
    def bands(self):
        return self.entries.shape[1]

    def digest(self) -> bytes:
        """32-byte SHA-256 over shape, windows and entries."""
        h = hashlib.sha256()
        h.update(np.array([self.snapshots, self.bands, self.bandwidth], "<u4").tobytes())
        h.update(self.lambda1.astype("<u4").tobytes())
        h.update(self.entries.tobytes())
        return h.digest()


@dataclass(frozen=True)
class MeasurementSet:
    """S x MN compressed measurements; column j is pixel j's compressed signature."""

    rows: int
    cols: int
    data: np.ndarray
    pattern_ref: bytes = b"\0" * 32
    noise_sigma: float = 0.0

    def __post_init__(self):
        d = _frozen(self.data, np.float64)
        if d.ndim != 2 or d.shape[1] != self.rows * self.cols or d.shape[0] < 1:
            raise ValidationError(
                f"measurement data shape {d.shape} inconsistent with {self.rows}x{self.cols} pixels")
        if not np.isfinite(d).all():
            raise ValidationError("non-finite measurement value")
        if not (self.noise_sigma >= 0 and np.isfinite(self.noise_sigma)):
            raise ValidationError("noise_sigma must be finite and >= 0")
        ref = bytes(self.pattern_ref)
        if len(ref) != 32:
            raise ValidationError("pattern_ref must be 32 bytes")
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "pattern_ref", ref)
        object.__setattr__(self, "noise_sigma", float(self.noise_sigma))

    @property
    def snapshots(self):
        return self.data.shape[0]

    @property
    def pixels(self):
        return self.data.shape[1]


@dataclass(frozen=True)
class RunConfig:
    """Solver and clustering knobs.

    ``lambda_`` / ``rho`` left as ``None`` select the data-driven defaults
    (``lambda = lambda_scale / mu`` and ``rho = 10 * lambda``). ``alpha = 0``
    turns the spatial term off (plain SSC).
    """

    seed: int = 0
    lambda_: Optional[float] = None
    lambda_scale: float = 10.0
    alpha: float = 200.0
    rho: Optional[float] = None
    max_iter: int = 500
    tol: float = 1e-4
    outer_iters: int = 3
    k: int = 4
    kmeans_restarts: int = 20

    def __post_init__(self):
        from .rng import check_seed
        check_seed(self.seed)
        if self.lambda_ is not None and not self.lambda_ > 0:
            raise ValidationError("lambda must be > 0")
        if self.rho is not None and not self.rho > 0:
            raise ValidationError("rho must be > 0")
        if not self.lambda_scale > 0:
            raise ValidationError("lambda_scale must be > 0")
        if not self.alpha >= 0:
            raise ValidationError("alpha must be >= 0")
        if not self.tol > 0:
            raise ValidationError("tol must be > 0")
        for name in ("max_iter", "outer_iters", "k", "kmeans_restarts"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")

    def to_dict(self):
        return {
            "seed": self.seed, "lambda": self.lambda_, "lambda_scale": self.lambda_scale,
            "alpha": self.alpha, "rho": self.rho, "max_iter": self.max_iter, "tol": self.tol,
            "outer_iters": self.outer_iters, "k": self.k, "kmeans_restarts": self.kmeans_restarts,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lambda_"] = d.pop("lambda")
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)
