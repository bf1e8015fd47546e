"""Convolutional capsule autoencoder network (CCAN) for unsupervised clustering
of fixed-length audio clips."""

__version__ = "0.1.0"

from .errors import CcanError, ConfigError, DataError, NumericalError, UsageError  # noqa: E402
from .tensor import Parameter, Tensor, backward, no_grad  # noqa: E402

__all__ = [
    "CcanError",
    "ConfigError",
    "DataError",
    "NumericalError",
    "Parameter",
    "Tensor",
    "UsageError",
    "backward",
    "no_grad",
    "__version__",
]
