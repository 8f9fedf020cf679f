"""Digital twin for directional indoor wireless links in equipment halls.

The toolchain synthesizes directional channel soundings, estimates
multipath components from them, calibrates an image-method ray tracer
against the estimates, trains a neural field conditioned on the
calibrated tracer, and evaluates deployment coverage from radio maps.
See the README for the pipeline walkthrough and file formats.
"""

from .backend import BACKEND, NUMBA_AVAILABLE
from .constants import C0, DEFAULT_FREQ_HZ, DEFAULT_POWER_FLOOR_DB

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "NUMBA_AVAILABLE",
    "C0",
    "DEFAULT_FREQ_HZ",
    "DEFAULT_POWER_FLOOR_DB",
    "__version__",
]
