"""Calibration model fitting: linear regression and NHGR.

Both model families share a Gaussian error structure. LR assumes a constant
error standard deviation per horizon and is fitted by least squares; NHGR
lets the standard deviation vary linearly with the ensemble spread and is
fitted by maximum likelihood over (mean coefficients, spread intercept,
spread slope) with a Nelder-Mead search, initialized from the LR solution.

Covariates for quantities other than the response ("type-Z") are rescaled so
their sample variance matches the response's before fitting; this changes
coefficient interpretation but, by construction, neither predictions nor
model selection.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.linalg
import scipy.special

from metocal._core import fit_gaussian_nm, gaussian_nll
from metocal.data_model import AlignedDataset, CovariateId, Quantity, parse_covariate
from metocal.errors import DataError, FitError

LOG_2PI = math.log(2.0 * math.pi)

MAX_CONDITION = 1e10
NM_FTOL = 1e-9
NM_MAX_ITER = 10_000
ENS_SD_DEGENERATE = 1e-12

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    """A candidate calibration model: family plus ordered mean covariates.

    The intercept is always included. For NHGR the spread covariate is
    implicitly the response-quantity ensemble standard deviation.
    """

    family: str  # "lr" | "nhgr"
    response: Quantity
    mean_covariates: tuple[CovariateId, ...]

    def __post_init__(self):
        if self.family not in ("lr", "nhgr"):
            raise DataError(f"unknown model family {self.family!r}")

    @property
    def covariate_label(self) -> str:
        if not self.mean_covariates:
            return "(intercept)"
        return "+".join(c.label for c in self.mean_covariates)

    @property
    def label(self) -> str:
        return f"{self.family}:{self.response.code}~{self.covariate_label}"

    def x_covariates(self) -> tuple[CovariateId, ...]:
        """Covariates for the same quantity as the response (unstandardized)."""
        return tuple(c for c in self.mean_covariates if c.quantity == self.response)

    def z_covariates(self) -> tuple[CovariateId, ...]:
        """Covariates for other quantities (standardized before fitting)."""
        return tuple(c for c in self.mean_covariates if c.quantity != self.response)


@dataclass(frozen=True)
class ZScale:
    """Standardization constants for one type-Z covariate."""

    mu: float
    sigma: float
    sigma_y: float


@dataclass(frozen=True)
class StandardizationParams:
    """Frozen training-sample standardization for a fitted model.

    scales is empty when standardization is disabled or the model has no
    type-Z covariates; covariates without an entry pass through unchanged.
    """

    sigma_y: float
    scales: dict[CovariateId, ZScale] = field(default_factory=dict)


def standardize(z: np.ndarray, scale: ZScale) -> np.ndarray:
    """Rescale a type-Z covariate to zero mean and the response's sample sd."""
    if scale.sigma <= 0:
        raise FitError("zero-variance covariate cannot be standardized")
    return (scale.sigma_y / scale.sigma) * (np.asarray(z, dtype=np.float64) - scale.mu)


def compute_standardization(data: AlignedDataset, spec: ModelSpec, enabled: bool = True) -> StandardizationParams:
    """Derive standardization constants from the training rows."""
    sigma_y = float(np.std(data.y, ddof=1)) if data.n > 1 else 0.0
    scales: dict[CovariateId, ZScale] = {}
    if enabled:
        if sigma_y <= 0:
            raise FitError("response has zero sample variance; cannot standardize")
        for cov in spec.z_covariates():
            col = data.columns[cov]
            sd = float(np.std(col, ddof=1))
            if sd <= 0:
                raise FitError(f"zero-variance covariate {cov.label}")
            scales[cov] = ZScale(mu=float(np.mean(col)), sigma=sd, sigma_y=sigma_y)
    return StandardizationParams(sigma_y=sigma_y, scales=scales)


def build_design(data: AlignedDataset, spec: ModelSpec, std: StandardizationParams) -> np.ndarray:
    """Design matrix: intercept column, then covariates in spec order."""
    cols = [np.ones(data.n)]
    for cov in spec.mean_covariates:
        if cov not in data.columns:
            raise DataError(f"dataset lacks covariate {cov.label}")
        col = data.columns[cov]
        if cov in std.scales:
            col = standardize(col, std.scales[cov])
        cols.append(np.asarray(col, dtype=np.float64))
    return np.ascontiguousarray(np.column_stack(cols))


@dataclass(frozen=True)
class LRParams:
    """LR estimates: intercept a, type-X gains b, type-Z gains c, residual sd s.

    s is the prediction-form residual sd sqrt(RSS/(n-p)); s_mle is the
    likelihood-maximizing form sqrt(RSS/n) used inside the reported NLL.
    """

    a: float
    b: tuple[float, ...]
    c: tuple[float, ...]
    s: float
    s_mle: float


@dataclass(frozen=True)
class NHGRParams:
    """NHGR estimates: mean part as LRParams, spread sd = d + e * ens_sd."""

    a: float
    b: tuple[float, ...]
    c: tuple[float, ...]
    d: float
    e: float
    e_fixed: bool = False


@dataclass(frozen=True)
class GaussianForecast:
    """Predictive mean and standard deviation for one target time."""

    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise FitError("predictive sd must be non-negative")

    def interval(self, level: float = 0.95) -> tuple[float, float]:
        z = float(scipy.special.ndtri(0.5 + level / 2.0))
        return (self.mu - z * self.sigma, self.mu + z * self.sigma)


@dataclass(frozen=True)
class FittedModel:
    """One fitted calibration model for a (spec, horizon) pair."""

    spec: ModelSpec
    horizon: int
    params: LRParams | NHGRParams
    std: StandardizationParams
    nll: float
    aic: float
    n: int
    p: int
    converged: bool = True
    iterations: int = 0


def mean_coefs(spec: ModelSpec, params: LRParams | NHGRParams) -> np.ndarray:
    """Coefficient vector in design order: intercept, then spec covariates."""
    b = iter(params.b)
    c = iter(params.c)
    out = [params.a]
    for cov in spec.mean_covariates:
        out.append(next(b) if cov.quantity == spec.response else next(c))
    return np.asarray(out, dtype=np.float64)


def _split_coefs(spec: ModelSpec, coefs: np.ndarray) -> tuple[float, tuple[float, ...], tuple[float, ...]]:
    a = float(coefs[0])
    b, c = [], []
    for cov, val in zip(spec.mean_covariates, coefs[1:]):
        (b if cov.quantity == spec.response else c).append(float(val))
    return a, tuple(b), tuple(c)


def _solve_ols(G: np.ndarray, y: np.ndarray, spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Least squares via pivoted QR with a condition guard; returns (coefs, residuals)."""
    q, r, piv = scipy.linalg.qr(G, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.min() == 0.0 or diag.max() / diag.min() > MAX_CONDITION:
        raise FitError(f"design matrix is rank deficient or ill-conditioned for {spec.label}")
    beta_p = scipy.linalg.solve_triangular(r, q.T @ y)
    beta = np.empty_like(beta_p)
    beta[piv] = beta_p
    resid = y - G @ beta
    return beta, resid


def _destandardize(
    spec: ModelSpec, coefs: np.ndarray, std: StandardizationParams
) -> np.ndarray:
    """Re-express design-basis coefficients against raw (unscaled) covariates.

    mu = a + sum(coef * z*) with z* = (sy/sz)(z - mz) equals
    [a - sum(coef * sy/sz * mz)] + sum(coef * sy/sz * z), so the transform
    touches only the intercept and the scaled columns.
    """
    out = coefs.copy()
    for i, cov in enumerate(spec.mean_covariates, start=1):
        if cov in std.scales:
            sc = std.scales[cov]
            ratio = sc.sigma_y / sc.sigma
            out[i] = coefs[i] * ratio
            out[0] -= coefs[i] * ratio * sc.mu
    return out


def _standardize_coefs(
    spec: ModelSpec, coefs: np.ndarray, std: StandardizationParams
) -> np.ndarray:
    """Inverse of _destandardize: raw-basis coefficients to the design basis."""
    out = coefs.copy()
    for i, cov in enumerate(spec.mean_covariates, start=1):
        if cov in std.scales:
            sc = std.scales[cov]
            ratio = sc.sigma_y / sc.sigma
            out[i] = coefs[i] / ratio
            out[0] += coefs[i] * sc.mu
    return out


def fit_lr(data: AlignedDataset, spec: ModelSpec, standardize_z: bool = True) -> FittedModel:
    """Fit the linear-regression calibration model by least squares.

    The reported NLL is the Gaussian negative log-likelihood at its maximum
    (variance RSS/n); the stored residual sd s uses the residual-degrees-of-
    freedom form RSS/(n-p).

    Fitting always happens in the standardized basis; standardize_z only
    selects the basis the coefficients are reported in, so predictions, NLL,
    AIC and any selection over specs are identical either way.
    """
    p = len(spec.mean_covariates) + 1
    if data.n <= p:
        raise FitError(f"need n > p to fit {spec.label}: n={data.n}, p={p}")
    std = compute_standardization(data, spec, enabled=bool(spec.z_covariates()))
    G = build_design(data, spec, std)
    coefs, resid = _solve_ols(G, data.y, spec)
    rss = float(resid @ resid)
    n = data.n
    s = math.sqrt(rss / (n - p))
    s_mle = math.sqrt(rss / n)
    nll = 0.5 * n * (LOG_2PI + math.log(rss / n) + 1.0) if rss > 0 else -math.inf
    if not standardize_z:
        coefs = _destandardize(spec, coefs, std)
        std = StandardizationParams(sigma_y=std.sigma_y, scales={})
    a, b, c = _split_coefs(spec, coefs)
    return FittedModel(
        spec=spec,
        horizon=data.horizon,
        params=LRParams(a=a, b=b, c=c, s=s, s_mle=s_mle),
        std=std,
        nll=nll,
        aic=2.0 * p + 2.0 * nll,
        n=n,
        p=p,
    )


def fit_nhgr(
    data: AlignedDataset,
    spec: ModelSpec,
    standardize_z: bool = True,
    init: NHGRParams | None = None,
    restarts: bool = True,
) -> FittedModel:
    """Fit the NHGR calibration model by maximum likelihood.

    Nelder-Mead over (mean coefficients, d, e), started from the LR solution
    with d = s_LR and e = 0, plus three restarts that probe away from the
    flat region near e = 0: (d, e=0.5), (d, e=1.0) and (d/2, e=0). The sd
    positivity constraint d + e*ens_sd > 0 is enforced by an infinite NLL
    outside the feasible region. When the ensemble sd column is (numerically)
    constant, e is unidentifiable and pinned at 0 with p reduced by one.

    `init` warm-starts the search from a previous fit (restarts are then
    skipped by default semantics of the given start point still being probed
    against the LR-based one).
    """
    k = len(spec.mean_covariates)
    if data.n <= k + 3:
        raise FitError(f"need n > p to fit {spec.label}: n={data.n}, p={k + 3}")
    e_fixed = float(np.std(data.ens_sd, ddof=1)) < ENS_SD_DEGENERATE
    if e_fixed:
        warnings.warn(
            f"ensemble sd column is constant at horizon {data.horizon}; "
            "spread slope e pinned at 0",
            stacklevel=2,
        )
    p = k + 3 - (1 if e_fixed else 0)

    # optimize in the standardized basis regardless of the reporting flag
    lr = fit_lr(data, spec, standardize_z=True)
    std = lr.std
    G = build_design(data, spec, std)
    y = np.ascontiguousarray(data.y)
    s_e = np.ascontiguousarray(data.ens_sd)

    d0 = max(lr.params.s, 1e-10 * (1.0 + abs(float(np.mean(y)))))
    base = np.concatenate([mean_coefs(spec, lr.params), [d0, 0.0]])

    starts = [base]
    if init is not None:
        warm_coefs = mean_coefs(spec, init)
        if std.scales and not standardize_z:
            warm_coefs = _standardize_coefs(spec, warm_coefs, std)
        warm = np.concatenate([warm_coefs, [init.d, init.e if not e_fixed else 0.0]])
        if math.isfinite(gaussian_nll(warm, y, G, s_e)):
            starts = [warm]
    elif restarts and not e_fixed:
        for d_s, e_s in ((d0, 0.5), (d0, 1.0), (0.5 * d0, 0.0)):
            alt = base.copy()
            alt[-2], alt[-1] = d_s, e_s
            starts.append(alt)

    best = None
    for x0 in starts:
        theta, f, iters, conv = fit_gaussian_nm(
            x0, y, G, s_e, not e_fixed, 0.05, NM_FTOL, NM_MAX_ITER
        )
        if best is None or f < best[1]:
            best = (theta, f, iters, conv)
    theta, f, iters, conv = best
    if not conv:
        warnings.warn(
            f"NHGR fit for {spec.label} at horizon {data.horizon} did not converge "
            f"within {NM_MAX_ITER} iterations; best point reported",
            stacklevel=2,
        )
    coefs = theta[: k + 1]
    if not standardize_z:
        coefs = _destandardize(spec, coefs, std)
        std = StandardizationParams(sigma_y=std.sigma_y, scales={})
    a, b, c = _split_coefs(spec, coefs)
    params = NHGRParams(a=a, b=b, c=c, d=float(theta[-2]), e=float(theta[-1]), e_fixed=e_fixed)
    if not math.isfinite(f):
        raise FitError(f"NHGR optimizer failed to find a feasible point for {spec.label}")
    return FittedModel(
        spec=spec,
        horizon=data.horizon,
        params=params,
        std=std,
        nll=float(f),
        aic=2.0 * p + 2.0 * float(f),
        n=data.n,
        p=p,
        converged=conv,
        iterations=iters,
    )


def fit(data: AlignedDataset, spec: ModelSpec, standardize_z: bool = True) -> FittedModel:
    """Fit `spec` with the estimator its family calls for."""
    if spec.family == "lr":
        return fit_lr(data, spec, standardize_z=standardize_z)
    return fit_nhgr(data, spec, standardize_z=standardize_z)


def nll(
    params: LRParams | NHGRParams,
    data: AlignedDataset,
    spec: ModelSpec,
    std: StandardizationParams | None = None,
) -> float:
    """Sum of negative log Gaussian densities of the sample at `params`.

    For LR parameters the per-row sd is the constant params.s; for NHGR it is
    d + e * ens_sd. Raises FitError if any row's sd is non-positive.
    """
    if std is None:
        std = StandardizationParams(sigma_y=0.0, scales={})
    G = build_design(data, spec, std)
    coefs = mean_coefs(spec, params)
    if isinstance(params, NHGRParams):
        theta = np.concatenate([coefs, [params.d, params.e]])
        s_e = np.ascontiguousarray(data.ens_sd)
    else:
        theta = np.concatenate([coefs, [params.s, 0.0]])
        s_e = np.zeros(data.n)
    out = gaussian_nll(theta, np.ascontiguousarray(data.y), G, s_e)
    if math.isinf(out) and out > 0:
        raise FitError("non-positive sd at some row under the given parameters")
    return float(out)


def predict(
    model: FittedModel,
    covariate_row: Mapping[CovariateId, float],
    ens_sd: float | None = None,
) -> GaussianForecast:
    """Calibrated Gaussian forecast for one covariate row.

    Applies the model's frozen standardization to type-Z inputs. NHGR
    predictions require the response-quantity ensemble sd and are refused
    (FitError) if the implied sd is non-positive.
    """
    coefs = mean_coefs(model.spec, model.params)
    mu = coefs[0]
    for cov, coef in zip(model.spec.mean_covariates, coefs[1:]):
        if cov not in covariate_row:
            raise DataError(f"missing covariate {cov.label} in prediction input")
        x = float(covariate_row[cov])
        if cov in model.std.scales:
            sc = model.std.scales[cov]
            x = (sc.sigma_y / sc.sigma) * (x - sc.mu)
        mu += coef * x
    if isinstance(model.params, NHGRParams):
        if ens_sd is None:
            raise DataError("NHGR prediction requires the ensemble sd")
        sigma = model.params.d + model.params.e * float(ens_sd)
        if sigma <= 0:
            raise FitError(
                f"NHGR predictive sd is non-positive ({sigma:.6g}) at ens_sd={ens_sd:.6g}; "
                "prediction refused"
            )
    else:
        sigma = model.params.s
    return GaussianForecast(mu=float(mu), sigma=float(sigma))


def predictive_params(model: FittedModel, data: AlignedDataset) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (mu, sigma) over an aligned dataset's rows.

    sigma entries may be non-positive for NHGR on unseen data; callers decide
    how to treat those rows.
    """
    G = build_design(data, model.spec, model.std)
    mu = G @ mean_coefs(model.spec, model.params)
    if isinstance(model.params, NHGRParams):
        sigma = model.params.d + model.params.e * data.ens_sd
    else:
        sigma = np.full(data.n, model.params.s)
    return mu, sigma


def model_to_dict(model: FittedModel) -> dict:
    """JSON-ready representation of a fitted model (value-exact round trip)."""
    quantities = {model.spec.response.code: model.spec.response.unit}
    for cov in model.spec.mean_covariates:
        quantities[cov.quantity.code] = cov.quantity.unit
    out = {
        "schema_version": SCHEMA_VERSION,
        "family": model.spec.family,
        "response": model.spec.response.code,
        "quantities": quantities,
        "horizon": model.horizon,
        "covariates": [c.label for c in model.spec.mean_covariates],
        "a": model.params.a,
        "b": list(model.params.b),
        "c": list(model.params.c),
        "std": {
            "sigma_y": model.std.sigma_y,
            "scales": {
                cov.label: {"mu": sc.mu, "sigma": sc.sigma}
                for cov, sc in model.std.scales.items()
            },
        },
        "n": model.n,
        "p": model.p,
        "nll": model.nll,
        "aic": model.aic,
        "converged": model.converged,
        "iterations": model.iterations,
    }
    if isinstance(model.params, NHGRParams):
        out.update(d=model.params.d, e=model.params.e, e_fixed=model.params.e_fixed)
    else:
        out.update(s=model.params.s, s_mle=model.params.s_mle)
    return out


def model_from_dict(doc: dict) -> FittedModel:
    """Inverse of model_to_dict."""
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported model schema version {doc.get('schema_version')!r}")
    quantities = {code: Quantity(code, unit) for code, unit in doc["quantities"].items()}
    response = quantities[doc["response"]]
    covs = tuple(parse_covariate(label, quantities) for label in doc["covariates"])
    spec = ModelSpec(family=doc["family"], response=response, mean_covariates=covs)
    if doc["family"] == "nhgr":
        params: LRParams | NHGRParams = NHGRParams(
            a=doc["a"], b=tuple(doc["b"]), c=tuple(doc["c"]),
            d=doc["d"], e=doc["e"], e_fixed=doc.get("e_fixed", False),
        )
    else:
        params = LRParams(a=doc["a"], b=tuple(doc["b"]), c=tuple(doc["c"]), s=doc["s"], s_mle=doc["s_mle"])
    scales = {
        parse_covariate(label, quantities): ZScale(
            mu=sc["mu"], sigma=sc["sigma"], sigma_y=doc["std"]["sigma_y"]
        )
        for label, sc in doc["std"]["scales"].items()
    }
    std = StandardizationParams(sigma_y=doc["std"]["sigma_y"], scales=scales)
    return FittedModel(
        spec=spec,
        horizon=doc["horizon"],
        params=params,
        std=std,
        nll=doc["nll"],
        aic=doc["aic"],
        n=doc["n"],
        p=doc["p"],
        converged=doc["converged"],
        iterations=doc["iterations"],
    )


def model_to_json(model: FittedModel) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True, indent=2) + "\n"


def model_from_json(text: str) -> FittedModel:
    return model_from_dict(json.loads(text))
