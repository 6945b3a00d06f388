"""Candidate enumeration and AIC-based model selection across horizons.

Candidates are all covariate subsets of a pool up to a size cap (default 3),
always with an intercept. The optimal model per horizon minimizes AIC; the
"consistent" model is the single candidate that attains the per-horizon
minimum most often, so one covariate set can be applied across all horizons.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Mapping

from metocal.data_model import AlignedDataset, CovariateId, Quantity
from metocal.errors import DataError, FitError
from metocal.regression import FittedModel, ModelSpec, fit

AIC_TIE_EPS = 1e-12

SCHEMA_VERSION = 1


def enumerate_specs(
    response: Quantity,
    pool: list[CovariateId],
    family: str,
    max_covariates: int = 3,
) -> list[ModelSpec]:
    """All covariate subsets of the pool up to max_covariates, plus intercept.

    Deterministic order: by subset size, then lexicographically on covariate
    labels. The empty subset (intercept-only model) is always first.
    """
    if max_covariates < 0:
        raise DataError("max_covariates must be non-negative")
    ordered = sorted(pool, key=lambda c: c.label)
    if len(set(ordered)) != len(ordered):
        raise DataError("covariate pool contains duplicates")
    specs = []
    for size in range(min(max_covariates, len(ordered)) + 1):
        for subset in combinations(ordered, size):
            specs.append(ModelSpec(family=family, response=response, mean_covariates=subset))
    return specs


@dataclass(frozen=True)
class SelectionResult:
    """Per-horizon AIC tables and the selected specs for one (response, family)."""

    response: Quantity
    family: str
    pool: tuple[CovariateId, ...]
    specs: tuple[ModelSpec, ...]
    horizons: tuple[int, ...]
    aic_table: dict[int, dict[str, float]]  # horizon -> covariate_label -> AIC
    optimal: dict[int, ModelSpec]
    consistent: ModelSpec = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "consistent", select_consistent(self))


def _argmin_spec(specs: list[ModelSpec], aics: Mapping[str, float]) -> ModelSpec:
    """AIC argmin with ties (within 1e-12) broken by fewer covariates, then order."""
    fitted = [s for s in specs if s.covariate_label in aics]
    best_aic = min(aics[s.covariate_label] for s in fitted)
    tied = [s for s in fitted if aics[s.covariate_label] <= best_aic + AIC_TIE_EPS]
    return min(tied, key=lambda s: (len(s.mean_covariates), specs.index(s)))


def select_optimal(
    data_by_horizon: Mapping[int, AlignedDataset],
    specs: list[ModelSpec],
    fitter: Callable[[AlignedDataset, ModelSpec], FittedModel] | None = None,
) -> SelectionResult:
    """Fit every candidate at every horizon and take the per-horizon AIC argmin.

    Candidates that cannot be fitted at some horizon (rank deficiency, too few
    rows) are skipped there with a warning but stay in play at other horizons.
    """
    if not specs:
        raise DataError("no candidate specs")
    if not data_by_horizon:
        raise DataError("no horizons to select over")
    fitter = fitter or fit
    response = specs[0].response
    family = specs[0].family
    pool = sorted({c for s in specs for c in s.mean_covariates}, key=lambda c: c.label)

    horizons = tuple(sorted(data_by_horizon))
    aic_table: dict[int, dict[str, float]] = {}
    optimal: dict[int, ModelSpec] = {}
    for h in horizons:
        data = data_by_horizon[h]
        aics: dict[str, float] = {}
        for s in specs:
            try:
                aics[s.covariate_label] = fitter(data, s).aic
            except FitError as exc:
                warnings.warn(f"skipping unfittable spec at horizon {h}: {exc}", stacklevel=2)
        if not aics:
            raise FitError(f"no fittable candidate spec at horizon {h}")
        aic_table[h] = aics
        optimal[h] = _argmin_spec(specs, aics)
    return SelectionResult(
        response=response,
        family=family,
        pool=tuple(pool),
        specs=tuple(specs),
        horizons=horizons,
        aic_table=aic_table,
        optimal=optimal,
    )


def selection_from_aic_tables(
    response: Quantity,
    family: str,
    specs: list[ModelSpec],
    aic_table: Mapping[int, Mapping[str, float]],
) -> SelectionResult:
    """Rebuild a SelectionResult from persisted AIC values (no refitting)."""
    pool = sorted({c for s in specs for c in s.mean_covariates}, key=lambda c: c.label)
    horizons = tuple(sorted(aic_table))
    optimal = {}
    for h in horizons:
        aics = aic_table[h]
        if not aics:
            raise FitError(f"no fittable candidate spec at horizon {h}")
        optimal[h] = _argmin_spec(specs, aics)
    return SelectionResult(
        response=response,
        family=family,
        pool=tuple(pool),
        specs=tuple(specs),
        horizons=horizons,
        aic_table={h: dict(aic_table[h]) for h in horizons},
        optimal=optimal,
    )


def select_consistent(result: SelectionResult) -> ModelSpec:
    """The spec that attains the per-horizon AIC minimum most often.

    Ties on the count are broken by the smallest AIC summed across the
    horizons, then by enumeration order. Membership in the minimum uses the
    same 1e-12 float-tie guard as the per-horizon argmin.
    """
    specs = list(result.specs)
    counts = {s.covariate_label: 0 for s in specs}
    sums = {s.covariate_label: 0.0 for s in specs}
    missing = {s.covariate_label: False for s in specs}
    for h in result.horizons:
        aics = result.aic_table[h]
        best = min(aics.values())
        for s in specs:
            lbl = s.covariate_label
            if lbl in aics:
                sums[lbl] += aics[lbl]
                if aics[lbl] <= best + AIC_TIE_EPS:
                    counts[lbl] += 1
            else:
                missing[lbl] = True
    return min(
        specs,
        key=lambda s: (
            -counts[s.covariate_label],
            float("inf") if missing[s.covariate_label] else sums[s.covariate_label],
            specs.index(s),
        ),
    )


def barcode(result: SelectionResult) -> tuple[list[str], list[int], list[list[int]]]:
    """Inclusion matrix: (row labels, horizons, 0/1 rows).

    Rows are the intercept (always 1) followed by the pool covariates; an
    entry is 1 iff the covariate is in that horizon's optimal model.
    """
    rows = ["intercept"] + [c.label for c in result.pool]
    horizons = list(result.horizons)
    matrix = [[1] * len(horizons)]
    for cov in result.pool:
        matrix.append(
            [1 if cov in result.optimal[h].mean_covariates else 0 for h in horizons]
        )
    return rows, horizons, matrix


def selection_to_dict(result: SelectionResult) -> dict:
    rows, horizons, matrix = barcode(result)
    return {
        "schema_version": SCHEMA_VERSION,
        "response": result.response.code,
        "family": result.family,
        "pool": [c.label for c in result.pool],
        "horizons": list(result.horizons),
        "aic_table": {str(h): result.aic_table[h] for h in result.horizons},
        "optimal": {str(h): result.optimal[h].covariate_label for h in result.horizons},
        "consistent": result.consistent.covariate_label,
        "barcode": {"rows": rows, "horizons": horizons, "matrix": matrix},
    }


def selection_to_json(result: SelectionResult) -> str:
    return json.dumps(selection_to_dict(result), sort_keys=True, indent=2) + "\n"


def barcode_csv(result: SelectionResult) -> str:
    """Barcode matrix as CSV: rows covariates, columns horizons."""
    rows, horizons, matrix = barcode(result)
    lines = ["covariate," + ",".join(str(h) for h in horizons)]
    for label, row in zip(rows, matrix):
        lines.append(label + "," + ",".join(str(v) for v in row))
    return "\n".join(lines) + "\n"
