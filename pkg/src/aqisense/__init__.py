"""Aerial-ground air quality sensing toolkit.

Pipeline stages: haze-relevant feature extraction from images, a 3D CNN
mapping feature stacks to AQI scale classes, harmonic spatio-temporal graph
inference with entropy-based weight learning, weighted-Voronoi region
division, joint-estimation-error wake-up scheduling, and a deterministic
simulator tying them together with an energy model.
"""

from .errors import (
    AqiSenseError,
    FormatError,
    InputError,
    NumericError,
    StateError,
)
from .scale import AQI_MAX, AqiScale, ClassPartition

__version__ = "0.1.0"

__all__ = [
    "AQI_MAX",
    "AqiScale",
    "AqiSenseError",
    "ClassPartition",
    "FormatError",
    "InputError",
    "NumericError",
    "StateError",
    "__version__",
]
