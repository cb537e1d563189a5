"""Distributed three-photon GHZ Bell-test simulation and analysis toolkit."""

__version__ = "0.1.0"

from . import counts, errors, qrng, quantum, schedules, simulator, spacetime
from . import timetag, tomography

__all__ = [
    "counts",
    "errors",
    "qrng",
    "quantum",
    "schedules",
    "simulator",
    "spacetime",
    "timetag",
    "tomography",
    "__version__",
]
