"""Laplacian eigenfunction neural operators for biomarker dynamics.

Learns spatiotemporal reaction-diffusion dynamics of Alzheimer's biomarkers
(amyloid, tau, neurodegeneration, cognition) on 2D meshes and brain graphs by
truncating fields onto a Laplacian eigenbasis and fitting the nonlinear drive
of a spectral semi-implicit time stepper with small fully connected networks.
"""

from .errors import (
    LenoError,
    InputError,
    StageOrderError,
    NumericalError,
)

__version__ = "0.1.0"

__all__ = [
    "LenoError",
    "InputError",
    "StageOrderError",
    "NumericalError",
    "__version__",
]
