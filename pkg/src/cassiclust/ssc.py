"""Spatially regularized sparse subspace clustering.

Solves::

    min_c  ||c||_1 + lam/2 ||y - y c||_F^2 + alpha/2 ||c - cbar||_F^2
    s.t.   diag(c) = 0,  1^T c = 1^T

where ``cbar`` is the 3x3x3 neighbourhood mean of ``c`` arranged as an
M x N x P cube. ``cbar`` is alternated with ADMM solves that hold it fixed.
"""
from dataclasses import dataclass, field
import logging
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import _kernels
from .errors import ValidationError

log = logging.getLogger(__name__)

MAX_PIXELS = 8192


@dataclass(frozen=True)
class SRSSCProblem:
    y: np.ndarray
    rows: int
    cols: int
    lam: Optional[float] = None
    alpha: float = 0.0
    rho: Optional[float] = None
    tol: float = 1e-4
    max_iter: int = 500
    outer_iters: int = 3
    lambda_scale: float = 10.0

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        if y.ndim != 2:
            raise ValidationError("y must be a D x P matrix")
        if y.shape[1] != self.rows * self.cols:
            raise ValidationError(f"y has {y.shape[1]} columns, expected {self.rows}*{self.cols}")
        if y.shape[1] > MAX_PIXELS:
            raise ValidationError(f"{y.shape[1]} pixels exceeds the dense limit of {MAX_PIXELS}")
        if y.shape[1] < 2:
            raise ValidationError("need at least two pixels")
        if not np.isfinite(y).all():
            raise ValidationError("y contains non-finite values")
        norms = np.linalg.norm(y, axis=0)
        if (norms == 0).any():
            raise ValidationError(f"y column {int(np.argmin(norms))} is zero")
        if self.lam is not None and not self.lam > 0:
            raise ValidationError("lambda must be > 0")
        if self.rho is not None and not self.rho > 0:
            raise ValidationError("rho must be > 0")
        if not self.alpha >= 0:
            raise ValidationError("alpha must be >= 0")
        if not self.tol > 0 or self.max_iter < 1 or self.outer_iters < 1:
            raise ValidationError("tol must be > 0 and iteration counts >= 1")
        object.__setattr__(self, "y", y)

    @property
    def pixels(self):
        return self.y.shape[1]

    def resolved_lambda(self):
        return self.lam if self.lam is not None else default_lambda(self.y, self.lambda_scale)

    def resolved_rho(self):
        return self.rho if self.rho is not None else 10.0 * self.resolved_lambda()


@dataclass(frozen=True)
class SRSSCSolution:
    c: np.ndarray
    g: np.ndarray
    c_bar: np.ndarray
    iterations: int
    converged: bool
    lam: float
    rho: float
    alpha: float
    residual_equality: float
    residual_diag: float
    residual_affine: float
    history: list = field(default_factory=list, repr=False)

    def objective(self):
        return objective(self.c, self.g, self.c_bar, self.lam, self.alpha)


def objective(c, g, c_bar, lam, alpha):
    return (np.abs(c).sum() + 0.5 * lam * np.square(g).sum()
            + 0.5 * alpha * np.square(c - c_bar).sum())


def default_lambda(y, scale=10.0):
    """``scale / mu`` with mu the smallest over columns of the largest off-diagonal |y_j^T y_i|."""
    gram = np.abs(y.T @ y)
    np.fill_diagonal(gram, 0.0)
    mu = gram.max(axis=0).min()
    if mu <= 0:
        raise ValidationError("some column of y is orthogonal to every other column")
    return scale / mu


def _box_sum(a, axis):
    out = a.copy()
    lo = [slice(None)] * a.ndim
    hi = [slice(None)] * a.ndim
    lo[axis], hi[axis] = slice(1, None), slice(None, -1)
    out[tuple(lo)] += a[tuple(hi)]
    out[tuple(hi)] += a[tuple(lo)]
    return out


def _box_count(n):
    cnt = np.full(n, 3.0)
    cnt[0] -= 1
    cnt[-1] -= 1
    if n == 1:
        cnt[0] = 1.0
    return cnt


def mean_filter_3d(c, M, N):
    """Mean over the 3x3x3 neighbourhood of the M x N x P coefficient cube.

    Column j of ``c`` (pixel j in raster order) is placed at spatial site
    (j // N, j % N); the third axis is the coefficient index. Windows are
    truncated at the borders and averaged over their valid entries.
    """
    c = np.asarray(c, dtype=np.float64)
    P = M * N
    if c.shape != (P, P):
        raise ValidationError(f"expected a {P}x{P} matrix for a {M}x{N} grid, got {c.shape}")
    cube = c.T.reshape(M, N, P)
    s = cube
    for axis in range(3):
        s = _box_sum(s, axis)
    count = (_box_count(M)[:, None, None] * _box_count(N)[None, :, None]
             * _box_count(P)[None, None, :])
    return (s / count).reshape(P, P).T


def prox_l1_affine(x, thresh):
    """Columnwise  argmin_c  thresh*||c||_1 + 1/2||c - x||^2  s.t. 1'c = 1', diag(c) = 0.

    Each column is soft(x_j - tau_j, thresh) off the diagonal, with tau_j the
    root of the decreasing piecewise-linear map tau -> sum_i soft(x_ij - tau).
    """
    xt = np.ascontiguousarray(np.asarray(x, dtype=np.float64).T)
    tau = np.full(xt.shape[0], np.nan)
    return _kernels.prox_rows(xt, float(thresh), tau).T


def solve_srssc(p: SRSSCProblem) -> SRSSCSolution:
    """ADMM with split ``a = c`` and an alternating neighbourhood-mean update.

    The residual g = y - y c is eliminated. Per iteration::

        a = (lam Y'Y + s I)^{-1} (lam Y'Y + X),  X = rho (c - u) + alpha cbar
        c = prox of ||.||_1 / rho at a + u over {diag(c) = 0, 1'c = 1'}
        u += a - c

    with s = rho + alpha, so both constraints hold exactly at every iterate.
    Woodbury turns the a-update into a + u = X/s + Y'R + u with R a D x P
    matrix, so an iteration costs two rank-D products plus one fused sweep
    over the coefficients. Stops once max|a - c| <= tol. With alpha = 0 a
    single outer pass is run.

    ``history`` holds (pass, iteration, max|a - c|, max|dc|, merit) with
    merit = sqrt(||du||^2 + ||dc||^2), which ADMM never increases within a
    pass.
    """
    y = p.y
    D, P = y.shape
    lam = p.resolved_lambda()
    rho = p.resolved_rho()
    alpha = float(p.alpha)
    s = rho + alpha

    yt = np.ascontiguousarray(y.T)
    yy = y @ yt
    gmat = cho_solve(cho_factor((s / lam) * np.eye(D) + yy), np.eye(D))
    b0 = (lam / s) * (yt - yt @ (yy @ gmat))
    g_s = gmat / s

    # row form: row j of each matrix is column j of its math counterpart
    ct = np.zeros((P, P))
    ut = np.zeros((P, P))
    xt = np.zeros((P, P))
    cbar_t = np.zeros((P, P))
    tau = np.full(P, np.nan)
    scratch = np.empty(P)
    outer = p.outer_iters if alpha > 0 else 1
    history = []
    total = 0
    converged = False
    for o in range(outer):
        if o > 0:
            cbar_t = np.ascontiguousarray(mean_filter_3d(ct.T, p.rows, p.cols).T)
            xt = rho * (ct - ut) + alpha * cbar_t
        converged = False
        best = (np.inf, None)
        for it in range(p.max_iter):
            rt = b0 - (xt @ yt) @ g_s
            lt = rt @ y
            r_eq, r_dc, merit = _kernels.admm_sweep(lt, xt, ut, ct, cbar_t, 1.0 / s, rho, alpha,
                                             1.0 / rho, tau, scratch)
            total += 1
            history.append((o, it, r_eq, r_dc, np.sqrt(merit)))
            if r_eq <= p.tol:
                converged = True
                break
            if it >= p.max_iter // 2 and r_eq < best[0]:
                best = (r_eq, ct.copy())
        if not converged:
            log.warning("ADMM pass %d hit max_iter=%d (residual %.3g)", o, p.max_iter, r_eq)
            if best[1] is not None and best[0] < r_eq:
                ct = best[1]

    c = np.ascontiguousarray(ct.T)
    g = y - y @ c
    ynorm = np.linalg.norm(y)
    return SRSSCSolution(
        c=c, g=g, c_bar=np.ascontiguousarray(cbar_t.T), iterations=total, converged=converged,
        lam=lam, rho=rho, alpha=alpha,
        residual_equality=float(np.linalg.norm(y - y @ c - g) / ynorm),
        residual_diag=float(np.abs(np.diag(c)).max()),
        residual_affine=float(np.abs(c.sum(axis=0) - 1.0).max()),
        history=history,
    )


def build_affinity(sol_or_c):
    """Symmetric affinity |c_n| + |c_n|^T, each column of |c| scaled by its max."""
    c = getattr(sol_or_c, "c", sol_or_c)
    a = np.abs(np.asarray(c, dtype=np.float64))
    peak = a.max(axis=0)
    nz = peak > 0
    a[:, nz] /= peak[nz]
    w = a + a.T
    np.fill_diagonal(w, 0.0)
    return w
