"""metocal: calibration and verification of medium-range metocean forecasts.

Fits per-horizon linear and non-homogeneous Gaussian regression calibration
models to multi-component forecast data (deterministic, control, ensemble),
selects covariate sets by AIC, and verifies the calibrated forecasts with
bias/spread statistics, KS tests, CRPS, rank histograms and bootstrap bands.
"""

from metocal._core import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
