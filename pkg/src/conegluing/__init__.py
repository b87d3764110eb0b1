"""Scalar-curvature gluing of asymptotically Euclidean metrics on cone-like domains,
with numerical checks of the weighted Poincare and Hardy inequalities behind it."""

import os

# thread count for the BLAS backends; must be set before numpy loads them
_threads = os.environ.get("CONEGLUING_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

from .errors import ConfigError, ConvergenceError, DomainError, GluingError, NumericalError
from .grid import GridSpec
from .tensor_calculus import Geometry, MetricField

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ConvergenceError",
    "DomainError",
    "Geometry",
    "GluingError",
    "GridSpec",
    "MetricField",
    "NumericalError",
]
