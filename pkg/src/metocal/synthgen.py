"""Seeded synthetic scenarios with a known calibration-model ground truth.

The generator mirrors the production data shape (6-hourly issue cadence,
mixed 3/6-hourly horizon grid, exchangeable ensembles) while guaranteeing an
exact oracle: for every issue time t and horizon tau, the emitted measurement
at t + tau is conditionally Gaussian given the emitted covariates, with mean
`a + sum(coef * covariate)` and sd `d + e * ensemble_sd` at the configured
true parameters.

Construction. Forecasts at successively shorter horizons refine a common
target: per target time T, the conditional means over the horizon ladder
form a Gaussian refinement sequence whose variance steps down as the horizon
shrinks, and the measurement is the final refinement plus noise at the
shortest rung. Each rung's variance is (d + e*s)^2 with ensemble spread s
growing in the horizon and modulated by a slow "storminess" process, so the
spread column varies within a horizon and (d, e) stay identifiable. The
rung's conditional mean is then translated into component values
(deterministic, control, ensemble) that reproduce it exactly under the true
coefficients. Residuals are independent of all covariates by construction,
so maximum likelihood recovers the configured parameters.

Randomness comes from the Philox counter-based generator; every logical
block draws from its own derived stream of the master seed, keyed by
quantity and purpose, so output is reproducible and order-independent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.signal

from metocal.data_model import (
    KIND_CTRL,
    KIND_DET,
    KIND_ENS_MEAN,
    CovariateId,
    ForecastTable,
    MeasurementTable,
    Quantity,
    parse_covariate,
    parse_time,
)
from metocal.errors import ConfigError

DEFAULT_HORIZONS = tuple(range(0, 73, 3)) + tuple(range(78, 169, 6))

_STREAMS_PER_QUANTITY = 8
_S_ANCHOR, _S_SPREAD, _S_MEMBERS, _S_DET, _S_CTRL, _S_BRIDGE, _S_OBS = range(7)


@dataclass(frozen=True)
class QuantityScenario:
    """Truth-process parameters for one physical quantity.

    truth_coefs maps covariates to their raw-scale coefficients in the
    generating relationship. Same-quantity ("own") coefficients must include
    the ensemble mean and must not sum to zero; coefficients on other
    quantities' covariates make the scenario's cross-quantity structure.
    """

    quantity: Quantity
    marginal_mean: float
    marginal_sd: float
    truth_intercept: float
    truth_coefs: dict[CovariateId, float]
    spread_intercept: float  # d > 0
    spread_slope: float  # e >= 0
    ar_hours: float = 36.0
    skill_hours: float = 120.0
    det_bias: float = 0.0
    det_offset_sd: float = 0.15
    ctrl_offset_sd: float = 0.35
    dispersion: float = 0.6
    spread_volatility: float = 0.3
    spread_ar_hours: float = 48.0

    def own_coefs(self) -> dict[CovariateId, float]:
        return {c: v for c, v in self.truth_coefs.items() if c.quantity == self.quantity}

    def cross_coefs(self) -> dict[CovariateId, float]:
        return {c: v for c, v in self.truth_coefs.items() if c.quantity != self.quantity}


@dataclass(frozen=True)
class ScenarioConfig:
    """Full scenario: grid shape, ensemble size, and per-quantity truth."""

    seed: int
    start: int  # first issue time, epoch hours
    end: int  # last issue time, inclusive
    quantities: tuple[QuantityScenario, ...]
    issue_step: int = 6
    horizons: tuple[int, ...] = DEFAULT_HORIZONS
    ensemble_size: int = 50

    def __post_init__(self):
        if self.issue_step <= 0 or 24 % self.issue_step != 0:
            raise ConfigError("issue_step must divide 24")
        if self.end < self.start:
            raise ConfigError("scenario end precedes start")
        hs = self.horizons
        if len(hs) == 0 or any(b <= a for a, b in zip(hs, hs[1:])) or hs[0] < 0:
            raise ConfigError("horizon grid must be non-negative and strictly increasing")
        if self.ensemble_size < 2:
            raise ConfigError("ensemble size must be at least 2")
        codes = [qs.quantity.code for qs in self.quantities]
        if len(set(codes)) != len(codes):
            raise ConfigError("duplicate quantity in scenario")
        for qs in self.quantities:
            if qs.marginal_sd <= 0 or qs.marginal_mean <= 0:
                raise ConfigError(f"{qs.quantity.code}: marginal scales must be positive")
            if qs.spread_intercept <= 0 or qs.spread_slope < 0:
                raise ConfigError(f"{qs.quantity.code}: need d > 0 and e >= 0")
            own = qs.own_coefs()
            if not any(c.kind == KIND_ENS_MEAN for c in own):
                raise ConfigError(
                    f"{qs.quantity.code}: truth coefficients must include the own ensemble mean"
                )
            if abs(sum(own.values())) < 1e-12:
                raise ConfigError(f"{qs.quantity.code}: own coefficients must not sum to zero")
        self._generation_order()

    def issue_times(self) -> np.ndarray:
        return np.arange(self.start, self.end + 1, self.issue_step, dtype=np.int64)

    def _generation_order(self) -> list[int]:
        """Topological order of quantities under cross-coefficient references."""
        codes = {qs.quantity.code: i for i, qs in enumerate(self.quantities)}
        deps = []
        for qs in self.quantities:
            d = set()
            for cov in qs.cross_coefs():
                if cov.quantity.code not in codes:
                    raise ConfigError(
                        f"{qs.quantity.code}: cross covariate {cov.label} references "
                        "a quantity not in the scenario"
                    )
                d.add(codes[cov.quantity.code])
            deps.append(d)
        order: list[int] = []
        done: set[int] = set()
        while len(order) < len(self.quantities):
            progressed = False
            for i, d in enumerate(deps):
                if i not in done and d <= done:
                    order.append(i)
                    done.add(i)
                    progressed = True
            if not progressed:
                raise ConfigError("cross-quantity truth coefficients form a cycle")
        return order


def _ar1(rng: np.random.Generator, n: int, decorrelation_hours: float) -> np.ndarray:
    """Stationary AR(1) with N(0,1) marginal on an hourly grid."""
    phi = math.exp(-1.0 / decorrelation_hours)
    innov = rng.standard_normal(n) * math.sqrt(1.0 - phi * phi)
    innov[0] = rng.standard_normal()  # exact stationary start
    return scipy.signal.lfilter([1.0], [1.0, -phi], innov)


def _stream(seed: int, qi: int, purpose: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.Philox(key=seed).jumped(qi * _STREAMS_PER_QUANTITY + purpose)
    )


def generate(config: ScenarioConfig) -> tuple[ForecastTable, MeasurementTable, dict]:
    """Produce (forecasts, measurements, truth record) for a scenario.

    Deterministic in the seed. The truth record carries the generating
    parameters per quantity for oracle tests.
    """
    issues = config.issue_times()
    horizons = np.asarray(config.horizons, dtype=np.int64)
    ni, nh = len(issues), len(horizons)
    m = config.ensemble_size

    targets = issues[:, None] + horizons[None, :]  # (ni, nh) epoch hours
    t0 = int(targets.min())
    hours = int(targets.max()) - t0 + 1

    flat_t = targets.ravel()
    flat_tau = np.tile(horizons, ni)
    order = np.lexsort((flat_tau, flat_t))
    t_sorted = flat_t[order]
    group_starts = np.flatnonzero(np.r_[True, np.diff(t_sorted) != 0])
    group_sizes = np.diff(np.r_[group_starts, len(t_sorted)])
    group_times = t_sorted[group_starts]
    group_last = group_starts + group_sizes - 1
    inv_order = np.empty_like(order)
    inv_order[order] = np.arange(len(order))

    emitted: dict[str, dict[str, np.ndarray]] = {}
    measurements: dict[str, np.ndarray] = {}

    f_times, f_h, f_qidx, f_comp, f_member, f_values = [], [], [], [], [], []
    qlist = [qs.quantity for qs in config.quantities]

    for qi in config._generation_order():
        qs = config.quantities[qi]
        rho = np.exp(-(horizons + 3.0) / qs.skill_hours)
        growth = np.sqrt(1.0 - rho * rho)

        u = _ar1(_stream(config.seed, qi, _S_ANCHOR), hours, qs.ar_hours)
        v = _ar1(_stream(config.seed, qi, _S_SPREAD), hours, qs.spread_ar_hours)
        storminess = np.exp(qs.spread_volatility * v - 0.5 * qs.spread_volatility**2)

        spread = (
            qs.dispersion * qs.marginal_sd * growth[None, :] * storminess[targets - t0]
        )  # exact ensemble sample sd per cell
        sigma = qs.spread_intercept + qs.spread_slope * spread
        sigma2_s = (sigma.ravel() ** 2)[order]

        # refinement ladder per target time: variance steps between rungs
        bridge_rng = _stream(config.seed, qi, _S_BRIDGE)
        w = bridge_rng.standard_normal(len(t_sorted))
        steps = np.diff(sigma2_s, append=0.0)
        steps[group_last] = 0.0
        cw = np.sqrt(np.maximum(steps, 0.0)) * w
        cum = np.concatenate([[0.0], np.cumsum(cw)])
        top_mean = (
            qs.marginal_mean + qs.marginal_sd * u[group_times - t0]
        )  # conditional mean at the longest available horizon
        flat_group = np.repeat(np.arange(len(group_starts)), group_sizes)
        cond_mean_s = top_mean[flat_group] + (cum[group_last[flat_group] + 1] - cum[np.arange(len(t_sorted))])
        cond_mean = cond_mean_s[inv_order].reshape(ni, nh)

        # measurement: final refinement plus noise at the shortest rung
        obs_rng = _stream(config.seed, qi, _S_OBS)
        eps0 = obs_rng.standard_normal(len(group_starts))
        y = cond_mean_s[group_starts] + np.sqrt(sigma2_s[group_starts]) * eps0
        measurements[qs.quantity.code] = y

        # component offsets around the (to be solved) common anchor
        zeta = _stream(config.seed, qi, _S_MEMBERS).standard_normal((ni, nh, m))
        zeta_mean = zeta.mean(axis=2)
        zeta_sd = zeta.std(axis=2, ddof=1)
        det_off = qs.det_bias + qs.det_offset_sd * qs.marginal_sd * _stream(
            config.seed, qi, _S_DET
        ).standard_normal((ni, nh))
        ctrl_off = qs.ctrl_offset_sd * qs.marginal_sd * _stream(
            config.seed, qi, _S_CTRL
        ).standard_normal((ni, nh))
        ens_off = spread * zeta_mean
        offsets = {KIND_DET: det_off, KIND_CTRL: ctrl_off, KIND_ENS_MEAN: ens_off}

        cross_part = np.zeros((ni, nh))
        for cov, coef in qs.cross_coefs().items():
            cross_part += coef * emitted[cov.quantity.code][cov.kind]

        own = qs.own_coefs()
        own_sum = sum(own.values())
        own_offset_part = np.zeros((ni, nh))
        for cov, coef in own.items():
            own_offset_part += coef * offsets[cov.kind]
        anchor = (cond_mean - qs.truth_intercept - cross_part - own_offset_part) / own_sum

        det = anchor + det_off
        ctrl = anchor + ctrl_off
        ens_mean = anchor + ens_off
        members = (
            anchor[:, :, None]
            + spread[:, :, None] * (zeta_mean[:, :, None] + (zeta - zeta_mean[:, :, None]) / zeta_sd[:, :, None])
        )
        emitted[qs.quantity.code] = {KIND_DET: det, KIND_CTRL: ctrl, KIND_ENS_MEAN: ens_mean}

        cell_times = np.repeat(issues, nh)
        cell_h = np.tile(horizons, ni)
        for comp_code, mat, member_idx in ((0, det, 0), (1, ctrl, 0)):
            f_times.append(cell_times)
            f_h.append(cell_h)
            f_qidx.append(np.full(ni * nh, qi, dtype=np.int16))
            f_comp.append(np.full(ni * nh, comp_code, dtype=np.int8))
            f_member.append(np.full(ni * nh, member_idx, dtype=np.int32))
            f_values.append(mat.ravel())
        for k in range(m):
            f_times.append(cell_times)
            f_h.append(cell_h)
            f_qidx.append(np.full(ni * nh, qi, dtype=np.int16))
            f_comp.append(np.full(ni * nh, 2, dtype=np.int8))
            f_member.append(np.full(ni * nh, k + 1, dtype=np.int32))
            f_values.append(members[:, :, k].ravel())

    forecasts = ForecastTable(
        np.concatenate(f_times),
        np.concatenate(f_h),
        np.concatenate(f_qidx),
        np.concatenate(f_comp),
        np.concatenate(f_member),
        np.concatenate(f_values),
        qlist,
    )
    m_times, m_qidx, m_values = [], [], []
    for qi, qs in enumerate(config.quantities):
        m_times.append(group_times)
        m_qidx.append(np.full(len(group_times), qi, dtype=np.int16))
        m_values.append(measurements[qs.quantity.code])
    meas = MeasurementTable(
        np.concatenate(m_times), np.concatenate(m_qidx), np.concatenate(m_values), qlist
    )
    return forecasts, meas, truth_record(config)


def truth_record(config: ScenarioConfig) -> dict:
    """Generating parameters per quantity, JSON-ready."""
    return {
        "seed": config.seed,
        "issue_step": config.issue_step,
        "horizons": list(int(h) for h in config.horizons),
        "ensemble_size": config.ensemble_size,
        "quantities": {
            qs.quantity.code: {
                "unit": qs.quantity.unit,
                "intercept": qs.truth_intercept,
                "coefficients": {c.label: v for c, v in qs.truth_coefs.items()},
                "spread_intercept": qs.spread_intercept,
                "spread_slope": qs.spread_slope,
                "marginal_mean": qs.marginal_mean,
                "marginal_sd": qs.marginal_sd,
            }
            for qs in config.quantities
        },
    }


def default_scenario(
    seed: int,
    start: str = "2022-05-17T00:00Z",
    end: str = "2022-09-17T00:00Z",
    ensemble_size: int = 20,
    horizons: tuple[int, ...] = DEFAULT_HORIZONS,
) -> ScenarioConfig:
    """A three-quantity scenario shaped like the production data.

    Each quantity is driven by its own deterministic and ensemble-mean
    forecasts plus one covariate from another quantity, a structure under
    which model selection has a well-defined right answer.
    """
    hs, w, tm = Quantity("hs", "m"), Quantity("w", "m/s"), Quantity("tm", "s")
    det = lambda q: CovariateId(q, KIND_DET)
    mean = lambda q: CovariateId(q, KIND_ENS_MEAN)
    return ScenarioConfig(
        seed=seed,
        start=parse_time(start),
        end=parse_time(end),
        issue_step=6,
        horizons=horizons,
        ensemble_size=ensemble_size,
        quantities=(
            QuantityScenario(
                quantity=w,
                marginal_mean=8.0,
                marginal_sd=2.5,
                truth_intercept=0.4,
                truth_coefs={det(w): 0.40, mean(w): 0.55},
                spread_intercept=0.6,
                spread_slope=0.7,
                det_bias=-0.2,
            ),
            QuantityScenario(
                quantity=hs,
                marginal_mean=2.0,
                marginal_sd=0.8,
                truth_intercept=0.1,
                truth_coefs={det(hs): 0.45, mean(hs): 0.50, mean(w): 0.02},
                spread_intercept=0.2,
                spread_slope=0.8,
                det_bias=0.05,
            ),
            QuantityScenario(
                quantity=tm,
                marginal_mean=6.0,
                marginal_sd=1.2,
                truth_intercept=0.6,
                truth_coefs={det(tm): 0.35, mean(tm): 0.55, det(hs): 0.08},
                spread_intercept=0.3,
                spread_slope=0.6,
                det_bias=-0.1,
            ),
        ),
    )


def scenario_from_dict(doc: dict) -> ScenarioConfig:
    """Parse a scenario config from its JSON form (see simulate subcommand)."""
    try:
        quantities = {}
        for code, q in doc["quantities"].items():
            quantities[code] = Quantity(code, q["unit"])
        qscens = []
        for code, q in doc["quantities"].items():
            coefs = {
                parse_covariate(label, quantities): float(val)
                for label, val in q["coefficients"].items()
            }
            fields = dict(
                quantity=quantities[code],
                marginal_mean=float(q["marginal_mean"]),
                marginal_sd=float(q["marginal_sd"]),
                truth_intercept=float(q["intercept"]),
                truth_coefs=coefs,
                spread_intercept=float(q["spread_intercept"]),
                spread_slope=float(q["spread_slope"]),
            )
            for opt in (
                "ar_hours", "skill_hours", "det_bias", "det_offset_sd",
                "ctrl_offset_sd", "dispersion", "spread_volatility", "spread_ar_hours",
            ):
                if opt in q:
                    fields[opt] = float(q[opt])
            qscens.append(QuantityScenario(**fields))
        return ScenarioConfig(
            seed=int(doc["seed"]),
            start=parse_time(doc["start"]),
            end=parse_time(doc["end"]),
            issue_step=int(doc.get("issue_step", 6)),
            horizons=tuple(int(h) for h in doc.get("horizons", DEFAULT_HORIZONS)),
            ensemble_size=int(doc.get("ensemble_size", 50)),
            quantities=tuple(qscens),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad scenario config: {exc}") from exc
