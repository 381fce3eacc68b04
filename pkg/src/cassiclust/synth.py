"""Synthetic union-of-subspaces cubes with spatially contiguous classes."""
import math

import numpy as np

from .data import LabelMap, SpectralCube
from .errors import ValidationError
from .rng import stream

SUBSPACE_DIM = 3


def block_layout(M, N, k):
    """Class index (1..k) per pixel, raster order, as a k-tile grid.

    The grid is gr x gc with gr the largest divisor of k not above sqrt(k), so
    k=4 gives quadrants and k=2 gives left/right halves. When the grid does
    not fit the image, pixels are dealt out in contiguous raster runs instead.
    """
    gr = max(d for d in range(1, math.isqrt(k) + 1) if k % d == 0)
    gc = k // gr
    if gr <= M and gc <= N:
        i = np.arange(M)[:, None] * gr // M
        j = np.arange(N)[None, :] * gc // N
        return (i * gc + j + 1).ravel()
    return np.arange(M * N) * k // (M * N) + 1


def synth_cube(seed, M, N, L, k, noise_sigma=0.0):
    """Random cube whose class-c pixels lie in a random 3-dim subspace.

    Bases and coefficients are drawn nonnegative so the noiseless cube is a
    valid radiance cube. With noise, values are clipped at 0.
    """
    if k < 1 or k > M * N:
        raise ValidationError(f"need 1 <= k <= M*N, got k={k} for {M}x{N}")
    if L < k:
        raise ValidationError(f"need L >= k, got L={L}, k={k}")
    if noise_sigma < 0:
        raise ValidationError("noise_sigma must be >= 0")
    rng = stream(seed, "synth_cube")
    labels = block_layout(M, N, k)
    d = min(SUBSPACE_DIM, L)
    bases = rng.uniform(0.0, 1.0, size=(k, L, d))
    coef = rng.uniform(0.0, 1.0, size=(M * N, d))
    spectra = np.einsum("pld,pd->pl", bases[labels - 1], coef)
    if noise_sigma > 0:
        noise = stream(seed, "synth_cube.noise").standard_normal(spectra.shape)
        spectra = np.maximum(spectra + noise_sigma * noise, 0.0)
    cube = SpectralCube(M, N, L, spectra.ravel())
    return cube, LabelMap(M, N, labels)
