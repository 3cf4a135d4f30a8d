"""Single-shot readout statistics for boxcar, peak-signal and maximum-likelihood filters."""

__version__ = "0.1.0"

from .model import INF, ParameterError, QubitState, ReadoutConfig  # noqa: E402

__all__ = ["INF", "ParameterError", "QubitState", "ReadoutConfig", "__version__"]
