"""coreord: consistent ordinal representation learning at desk scale.

Trains a small feature encoder so that pairwise feature-distance
distributions match label-distance distributions through a
prototype-constrained KL objective solved by dual decomposition, and
ships the numerical oracles that validate the closed-form solutions.
"""

import os

# Honor the thread cap before numpy binds its BLAS thread pool.  Only takes
# effect when coreord is imported before numpy in the process (true for the
# CLI entry point); existing settings are never overridden.
_threads = os.environ.get("CORE_THREADS")
if _threads:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)
del os, _threads

from . import baselines, datagen, dualcore, encoder, metrics, otd  # noqa: E402
from .errors import (  # noqa: E402
    ConfigError,
    CoreordError,
    DatasetIOError,
    DegenerateBatchError,
    DivergenceOverflowError,
    InputError,
    NonFiniteLossError,
    OracleFailureError,
    UndefinedCorrelationError,
)

__version__ = "0.1.0"

__all__ = [
    "otd",
    "dualcore",
    "baselines",
    "encoder",
    "datagen",
    "metrics",
    "CoreordError",
    "InputError",
    "DegenerateBatchError",
    "ConfigError",
    "DivergenceOverflowError",
    "OracleFailureError",
    "NonFiniteLossError",
    "DatasetIOError",
    "UndefinedCorrelationError",
    "__version__",
]
