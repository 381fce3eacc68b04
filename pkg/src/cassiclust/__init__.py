"""Clustering spectral images from simulated coded-aperture snapshot measurements."""
__version__ = "0.1.0"

from .data import CodingPattern, LabelMap, MeasurementSet, RunConfig, SpectralCube
from .errors import FormatError, ValidationError

__all__ = [
    "CodingPattern", "FormatError", "LabelMap", "MeasurementSet", "RunConfig",
    "SpectralCube", "ValidationError", "__version__",
]
