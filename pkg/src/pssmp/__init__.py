"""Scale functions and exit problems for positive self-similar Markov processes with one-sided jumps."""
from __future__ import annotations

from ._accel import backend_name
from .errors import (
    BarrierOrderError,
    GridMismatchError,
    ModelError,
    NonConvergence,
    PssmpError,
    QuadratureFailure,
    RepeatedRootError,
    TailNotCertified,
    UnsupportedIndexError,
    UnsupportedModelError,
)
from .levy_model import SnlpModel, dpsi, esscher, load_model, phi, psi

__version__ = "0.1.0"
