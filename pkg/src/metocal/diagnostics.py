"""Forecast verification: error statistics, KS tests, CRPS, PIT, bootstrap.

All calibrated forecasts here are Gaussian, so the CRPS has a closed form
and the PIT is the Gaussian CDF of the standardized residual. The KS test
checks standardized residuals against a standard Gaussian using the
asymptotic Kolmogorov distribution with the Stephens small-sample
correction. Bootstrap intervals resample rows i.i.d. with replacement,
one counter-based random stream per replicate so results do not depend on
execution order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from metocal.data_model import AlignedDataset
from metocal.errors import DataError, FitError
from metocal.regression import GaussianForecast, NHGRParams, fit_lr, fit_nhgr

SQRT_PI = math.sqrt(math.pi)
SQRT_2PI = math.sqrt(2.0 * math.pi)

KS_SERIES_EPS = 1e-12
BOOTSTRAP_MIN_B = 100
BOOTSTRAP_MAX_FAILURES = 0.05


@dataclass(frozen=True)
class PitHistogram:
    """Counts of probability-integral-transform values over equal bins on [0,1]."""

    bin_count: int
    counts: tuple[int, ...]
    n: int

    def density(self) -> np.ndarray:
        """Histogram as a density relative to uniform (1.0 = perfectly flat)."""
        return np.asarray(self.counts, dtype=np.float64) * self.bin_count / max(self.n, 1)


@dataclass(frozen=True)
class HorizonDiagnostics:
    """Verification summary for one (response, horizon, source) triple."""

    horizon: int
    source: str  # "det" | "lr" | "nhgr"
    n: int
    bias: float
    err_sd: float
    mean_crps: float
    bias_ci: tuple[float, float]
    ks_stat: float | None = None
    ks_pvalue: float | None = None
    excluded_rows: int = 0


def error_stats(y: np.ndarray, mu: np.ndarray) -> tuple[float, float]:
    """Bias and sample sd (divisor n-1) of the forecast error y - mu."""
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if y.shape != mu.shape:
        raise DataError("y and mu must have equal length")
    if len(y) < 2:
        raise DataError("error statistics need at least 2 rows")
    err = y - mu
    return float(np.mean(err)), float(np.std(err, ddof=1))


def standardized_residuals(y: np.ndarray, forecasts: Sequence[GaussianForecast]) -> np.ndarray:
    """(y - mu) / sigma per row; every sigma must be positive."""
    mu = np.array([f.mu for f in forecasts])
    sigma = np.array([f.sigma for f in forecasts])
    y = np.asarray(y, dtype=np.float64)
    if len(y) != len(mu):
        raise DataError("y and forecasts must have equal length")
    if np.any(sigma <= 0):
        raise FitError("standardized residuals need sigma > 0 for every row")
    return (y - mu) / sigma


def ks_test(sample: np.ndarray) -> tuple[float, float]:
    """One-sample KS test against the standard Gaussian.

    D is the supremum distance between the empirical CDF and Phi. The
    p-value uses the Kolmogorov asymptotic survival function evaluated at
    the Stephens-corrected statistic (sqrt(n) + 0.12 + 0.11/sqrt(n)) * D,
    with the alternating series truncated once terms drop below 1e-12.
    """
    x = np.sort(np.asarray(sample, dtype=np.float64))
    n = len(x)
    if n < 5:
        raise DataError(f"KS test needs n >= 5, got {n}")
    if not np.all(np.isfinite(x)):
        raise DataError("KS sample contains non-finite values")
    cdf = ndtr(x)
    i = np.arange(1, n + 1)
    d = float(np.max(np.maximum(i / n - cdf, cdf - (i - 1) / n)))
    lam = (math.sqrt(n) + 0.12 + 0.11 / math.sqrt(n)) * d
    return d, _kolmogorov_sf(lam)


def _kolmogorov_sf(lam: float) -> float:
    """Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2), truncated."""
    if lam <= 0:
        return 1.0
    total = 0.0
    sign = 1.0
    k = 1
    while k < 100_000:
        term = math.exp(-2.0 * k * k * lam * lam)
        if term < KS_SERIES_EPS:
            break
        total += sign * term
        sign = -sign
        k += 1
    return min(1.0, max(0.0, 2.0 * total))


def crps_gaussian(y, mu, sigma):
    """CRPS of a Gaussian predictive distribution at observation y.

    Closed form sigma * [z(2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi)] with
    z = (y - mu)/sigma; the point-mass limit sigma = 0 gives |y - mu|.
    Accepts scalars or arrays (broadcast elementwise).
    """
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma < 0):
        raise FitError("CRPS needs sigma >= 0")
    scalar = y.ndim == 0 and mu.ndim == 0 and sigma.ndim == 0
    y, mu, sigma = np.broadcast_arrays(np.atleast_1d(y), np.atleast_1d(mu), np.atleast_1d(sigma))
    out = np.abs(y - mu).astype(np.float64)
    pos = sigma > 0
    if np.any(pos):
        err = y[pos] - mu[pos]
        z = err / sigma[pos]
        phi = np.exp(-0.5 * z * z) / SQRT_2PI
        # sigma*z*(2Phi-1) written as err*(2Phi-1) so extreme z stays finite
        out[pos] = err * (2.0 * ndtr(z) - 1.0) + sigma[pos] * (2.0 * phi - 1.0 / SQRT_PI)
    return float(out[0]) if scalar else out


def crps_values(y: np.ndarray, forecasts: Sequence[GaussianForecast]) -> np.ndarray:
    """Per-row CRPS values (for CRPS-vs-observation plots)."""
    if len(y) != len(forecasts):
        raise DataError("y and forecasts must have equal length")
    if len(y) == 0:
        raise DataError("empty input")
    mu = np.array([f.mu for f in forecasts])
    sigma = np.array([f.sigma for f in forecasts])
    return crps_gaussian(np.asarray(y, dtype=np.float64), mu, sigma)


def mean_crps(y: np.ndarray, forecasts: Sequence[GaussianForecast]) -> float:
    """Arithmetic mean of the per-row CRPS values."""
    return float(np.mean(crps_values(y, forecasts)))


def pit_histogram(y: np.ndarray, forecasts: Sequence[GaussianForecast], bin_count: int = 10) -> PitHistogram:
    """Histogram of Phi((y - mu)/sigma) over equal bins on [0, 1].

    A PIT value of exactly 1.0 lands in the last bin.
    """
    if bin_count < 2:
        raise DataError("need at least 2 bins")
    u = ndtr(standardized_residuals(y, forecasts))
    return pit_histogram_from_values(u, bin_count)


def pit_histogram_from_values(u: np.ndarray, bin_count: int = 10) -> PitHistogram:
    """Bin PIT values already on [0, 1] (used when pooling across horizons)."""
    if bin_count < 2:
        raise DataError("need at least 2 bins")
    u = np.asarray(u, dtype=np.float64)
    idx = np.minimum((u * bin_count).astype(np.int64), bin_count - 1)
    counts = np.bincount(idx, minlength=bin_count)
    return PitHistogram(bin_count=bin_count, counts=tuple(int(c) for c in counts), n=len(u))


def _replicate_rng(seed: int, replicate: int) -> np.random.Generator:
    """Independent counter-based stream for one bootstrap replicate."""
    return np.random.Generator(np.random.Philox(key=seed).jumped(replicate))


def bootstrap_ci(
    rows,
    statistic: Callable,
    b: int,
    seed: int,
    level: float = 0.95,
) -> tuple[float, float]:
    """Percentile bootstrap interval for a statistic of i.i.d.-resampled rows.

    `rows` is an array (or tuple of index-aligned arrays) resampled with
    replacement along the first axis; `statistic` maps the resampled rows to
    a scalar. Deterministic given the seed: replicate i always uses stream i
    of the master seed. Aborts if more than 5% of resamples raise.
    """
    stats = _bootstrap_samples(rows, statistic, b, seed)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(stats, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def _bootstrap_samples(rows, statistic: Callable, b: int, seed: int) -> np.ndarray:
    if b < BOOTSTRAP_MIN_B:
        raise DataError(f"bootstrap needs B >= {BOOTSTRAP_MIN_B}, got {b}")
    arrays = rows if isinstance(rows, tuple) else (rows,)
    n = len(arrays[0])
    if n < 2:
        raise DataError("bootstrap needs at least 2 rows")
    out = []
    failures = []
    for i in range(b):
        idx = _replicate_rng(seed, i).integers(0, n, n)
        resampled = tuple(a[idx] for a in arrays)
        try:
            out.append(statistic(*resampled))
        except (FitError, DataError, FloatingPointError) as exc:
            failures.append(str(exc))
    if len(failures) > BOOTSTRAP_MAX_FAILURES * b:
        raise FitError(
            f"statistic failed on {len(failures)}/{b} bootstrap resamples; "
            f"first failure: {failures[0]}"
        )
    return np.asarray(out, dtype=np.float64)


def bootstrap_model_ci(
    data,
    spec,
    b: int,
    seed: int,
    level: float = 0.95,
    standardize_z: bool = True,
) -> dict[str, tuple[float, float]]:
    """Percentile intervals for every model parameter via refit-on-resample.

    Resamples rows of the aligned dataset, refits the model (NHGR refits are
    warm-started from the full-data optimum), and takes per-parameter
    percentile intervals. Resamples that fail to fit are skipped and counted
    against the 5% failure budget.
    """
    samples, names, _ = bootstrap_model_samples(data, spec, b, seed, standardize_z=standardize_z)
    alpha = (1.0 - level) / 2.0
    out = {}
    for j, name in enumerate(names):
        lo, hi = np.quantile(samples[:, j], [alpha, 1.0 - alpha])
        out[name] = (float(lo), float(hi))
    return out


def bootstrap_model_samples(
    data,
    spec,
    b: int,
    seed: int,
    standardize_z: bool = True,
) -> tuple[np.ndarray, list[str], int]:
    """Bootstrap replicate parameter estimates (matrix, names, failure count)."""
    if b < BOOTSTRAP_MIN_B:
        raise DataError(f"bootstrap needs B >= {BOOTSTRAP_MIN_B}, got {b}")
    if data.n < 2:
        raise DataError("bootstrap needs at least 2 rows")

    if spec.family == "nhgr":
        base = fit_nhgr(data, spec, standardize_z=standardize_z)
    else:
        base = fit_lr(data, spec, standardize_z=standardize_z)
    names = parameter_names(spec)

    out = []
    failures = 0
    for i in range(b):
        idx = np.sort(_replicate_rng(seed, i).integers(0, data.n, data.n))
        resampled = AlignedDataset(
            response=data.response,
            horizon=data.horizon,
            times=data.times[idx].copy(),
            y=data.y[idx].copy(),
            columns={cov: col[idx].copy() for cov, col in data.columns.items()},
            ens_sd=data.ens_sd[idx].copy(),
        )
        try:
            if spec.family == "nhgr":
                m = fit_nhgr(resampled, spec, standardize_z=standardize_z, init=base.params)
            else:
                m = fit_lr(resampled, spec, standardize_z=standardize_z)
            out.append(parameter_values(m))
        except (FitError, DataError) as exc:
            failures += 1
            if failures > BOOTSTRAP_MAX_FAILURES * b:
                raise FitError(
                    f"refit failed on more than {BOOTSTRAP_MAX_FAILURES:.0%} of resamples; "
                    f"last failure: {exc}"
                ) from exc
    return np.asarray(out, dtype=np.float64), names, failures


def parameter_names(spec) -> list[str]:
    names = ["a"]
    names += [f"b[{c.label}]" for c in spec.x_covariates()]
    names += [f"c[{c.label}]" for c in spec.z_covariates()]
    if spec.family == "nhgr":
        names += ["d", "e"]
    else:
        names += ["s"]
    return names


def parameter_values(model) -> list[float]:
    p = model.params
    vals = [p.a, *p.b, *p.c]
    if isinstance(p, NHGRParams):
        vals += [p.d, p.e]
    else:
        vals += [p.s]
    return vals
