"""Coded-aperture pattern generation: random baseline and greedy pursuit."""
from dataclasses import dataclass

import numpy as np

from .data import CodingPattern
from .errors import ValidationError
from .rng import stream

MAX_RETRIES = 64


@dataclass(frozen=True)
class GPState:
    """Scores seen while choosing one greedy-pursuit snapshot."""

    snapshot: int
    committed: np.ndarray      # rows committed before this snapshot
    window_scores: np.ndarray  # u[k'] for window starts 0..L-bw
    window_candidates: np.ndarray
    start: int
    adjacency_scores: np.ndarray  # in-window scores at the last refinement
    refine_candidates: tuple      # argmin set used by each refinement step


@dataclass(frozen=True)
class PatternScore:
    band_correlation: float
    snapshot_correlation: float
    coverage_min: int
    coverage_max: int

    @property
    def total(self):
        return self.band_correlation + self.snapshot_correlation

    @property
    def coverage_spread(self):
        return self.coverage_max - self.coverage_min


def _check_dims(S, L, bw):
    if S < 1:
        raise ValidationError("need at least one snapshot")
    if not 1 <= bw <= L:
        raise ValidationError(f"bandwidth must satisfy 1 <= bandwidth <= L, got {bw} with L={L}")


def _windowed_row(rng, L, bw, start):
    row = np.zeros(L, dtype=np.uint8)
    row[start:start + bw] = rng.integers(0, 2, size=bw)
    return row


def _acceptable(row, rows):
    return row.any() and not any(np.array_equal(row, r) for r in rows)


def _build(rows, starts, bw):
    starts = np.asarray(starts)
    return CodingPattern(np.array(rows), starts, starts + bw - 1, bw)


def random_pattern(seed, S, L, bw) -> CodingPattern:
    """Uniform window start per snapshot, Bernoulli(1/2) entries inside it."""
    _check_dims(S, L, bw)
    rng = stream(seed, "random_pattern")
    rows, starts = [], []
    for s in range(S):
        for _ in range(MAX_RETRIES):
            start = int(rng.integers(0, L - bw + 1))
            row = _windowed_row(rng, L, bw, start)
            if _acceptable(row, rows):
                break
        else:
            raise ValidationError(f"snapshot {s}: no valid row after {MAX_RETRIES} draws")
        rows.append(row)
        starts.append(start)
    return _build(rows, starts, bw)


def window_scores(committed, bw):
    """u[k'] = number of committed ones in bands k'..k'+bw-1, for every start k'."""
    coverage = np.asarray(committed, dtype=np.int64).sum(axis=0)
    return np.convolve(coverage, np.ones(bw, dtype=np.int64), mode="valid")


def adjacency_scores(rows, start, bw):
    """Per in-window band k', count of snapshots with ones at both k'-1 and k'."""
    h = np.asarray(rows, dtype=np.int64)
    prev = np.zeros_like(h)
    prev[:, 1:] = h[:, :-1]
    both = (h * prev).sum(axis=0)
    return both[start:start + bw]


def gp_pattern(seed, S, L, bw, trace=None) -> CodingPattern:
    """Greedy-pursuit pattern.

    Snapshot 0 is drawn like ``random_pattern``. Each later snapshot takes a
    window start uniformly from the least-covered windows, fills the window
    with fair coins, and then re-flips ``bw // 2`` entries, each chosen
    uniformly among in-window bands with the lowest adjacent-band product
    count (committed rows plus the current one).

    If ``trace`` is a list, one :class:`GPState` per snapshot >= 1 is appended.
    """
    _check_dims(S, L, bw)
    rng = stream(seed, "gp_pattern")
    rows, starts = [], []
    for _ in range(MAX_RETRIES):
        start = int(rng.integers(0, L - bw + 1))
        row = _windowed_row(rng, L, bw, start)
        if row.any():
            break
    else:
        raise ValidationError(f"snapshot 0: no valid row after {MAX_RETRIES} draws")
    rows.append(row)
    starts.append(start)

    for s in range(1, S):
        committed = np.array(rows)
        u = window_scores(committed, bw)
        cand = np.flatnonzero(u == u.min())
        for _ in range(MAX_RETRIES):
            start = int(rng.choice(cand))
            row = _windowed_row(rng, L, bw, start)
            picks = []
            for _ in range(bw // 2):
                adj = adjacency_scores(np.vstack([committed, row]), start, bw)
                best = np.flatnonzero(adj == adj.min())
                picks.append(best)
                row[start + int(rng.choice(best))] = rng.integers(0, 2)
            if _acceptable(row, rows):
                break
        else:
            raise ValidationError(f"snapshot {s}: no valid row after {MAX_RETRIES} draws")
        if trace is not None:
            trace.append(GPState(s, committed, u, cand, start,
                                 adjacency_scores(np.vstack([committed, row]), start, bw),
                                 tuple(picks)))
        rows.append(row)
        starts.append(start)
    return _build(rows, starts, bw)


def score_pattern(pattern) -> PatternScore:
    """Correlation terms of the pattern objective plus band coverage range.

    band_correlation sums squared inner products of adjacent band columns;
    snapshot_correlation sums squared inner products over ordered pairs of
    distinct snapshot rows.
    """
    h = np.asarray(getattr(pattern, "entries", pattern), dtype=np.int64)
    cols = (h[:, :-1] * h[:, 1:]).sum(axis=0)
    gram = h @ h.T
    off = gram[~np.eye(h.shape[0], dtype=bool)]
    coverage = h.sum(axis=0)
    return PatternScore(float((cols**2).sum()), float((off**2).sum()),
                        int(coverage.min()), int(coverage.max()))
