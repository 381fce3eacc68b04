"""Compressive measurement simulation.

Each measurement is a coded sum over bands of one pixel's spectrum plus
additive white Gaussian noise after integration. Sums accumulate band by
band in increasing band order, so results are bit-identical to a plain
per-pixel loop.
"""
from dataclasses import dataclass

import numpy as np

from .data import CodingPattern, MeasurementSet, SpectralCube
from .errors import ValidationError
from .rng import check_seed, stream


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ValidationError(f"noise sigma must be finite and >= 0, got {self.sigma}")
        check_seed(self.seed)


def sigma_for_snr(signal, snr_db):
    """Noise std giving ``snr_db`` relative to the RMS of ``signal``."""
    rms = float(np.sqrt(np.mean(np.square(signal))))
    return rms / 10.0 ** (snr_db / 20.0)


def _noise(noise, shape):
    if noise.sigma == 0:
        return None
    return noise.sigma * stream(noise.seed, "sense.noise").standard_normal(shape)


def sense(cube: SpectralCube, pattern: CodingPattern, noise: NoiseSpec = NoiseSpec()) -> MeasurementSet:
    h = np.asarray(getattr(pattern, "entries", pattern), dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != cube.bands:
        raise ValidationError(f"pattern has {h.shape[-1]} bands, cube has {cube.bands}")
    f = cube.signatures()
    y = np.zeros((h.shape[0], cube.pixels))
    for k in range(cube.bands):
        y += h[:, k:k + 1] * f[k]
    w = _noise(noise, y.shape)
    if w is not None:
        y += w
    ref = pattern.digest() if isinstance(pattern, CodingPattern) else b"\0" * 32
    return MeasurementSet(cube.rows, cube.cols, y, ref, noise.sigma)


def spatially_varying_sense(cube: SpectralCube, codes, noise: NoiseSpec = NoiseSpec()) -> MeasurementSet:
    """Sense with a per-pixel code tensor of shape (S, M*N, L)."""
    t = np.asarray(codes, dtype=np.float64)
    if t.ndim != 3 or t.shape[1:] != (cube.pixels, cube.bands):
        raise ValidationError(
            f"code tensor shape {t.shape} does not match (S, {cube.pixels}, {cube.bands})")
    f = cube.signatures()
    y = np.zeros(t.shape[:2])
    for k in range(cube.bands):
        y += t[:, :, k] * f[k]
    w = _noise(noise, y.shape)
    if w is not None:
        y += w
    return MeasurementSet(cube.rows, cube.cols, y, b"\0" * 32, noise.sigma)
