"""Run configuration: file paths, responses, pools, periods, bootstrap."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from metocal.data_model import (
    DEFAULT_QUANTITIES,
    KIND_CTRL,
    KIND_DET,
    KIND_ENS_MEAN,
    CovariateId,
    Quantity,
    parse_covariate,
    parse_time,
)
from metocal.errors import ConfigError, DataError


@dataclass(frozen=True)
class Period:
    """Inclusive date range; a forecast row belongs to a period only when
    both its issue time and its target time fall inside."""

    start: int  # epoch hours
    end: int

    def __post_init__(self):
        if self.end < self.start:
            raise ConfigError("period end precedes start")

    def overlaps(self, other: "Period") -> bool:
        return self.start <= other.end and other.start <= self.end


def default_pool(response: Quantity, quantities: list[Quantity]) -> list[CovariateId]:
    """Deterministic, control and ensemble mean of the response quantity,
    plus deterministic and ensemble mean of every other quantity."""
    pool = [
        CovariateId(response, KIND_DET),
        CovariateId(response, KIND_CTRL),
        CovariateId(response, KIND_ENS_MEAN),
    ]
    for q in quantities:
        if q.code != response.code:
            pool.append(CovariateId(q, KIND_DET))
            pool.append(CovariateId(q, KIND_ENS_MEAN))
    return pool


@dataclass(frozen=True)
class RunConfig:
    forecasts: Path
    measurements: Path
    out: Path
    quantities: dict[str, Quantity]
    responses: tuple[Quantity, ...]
    pools: dict[str, tuple[CovariateId, ...]]  # response code -> pool
    train: Period
    test_periods: dict[str, Period] = field(default_factory=dict)
    families: tuple[str, ...] = ("lr", "nhgr")
    max_covariates: int = 3
    standardize: bool = True
    bootstrap_b: int = 1000
    seed: int = 0
    jobs: int = 1
    per_row_crps: bool = False

    def __post_init__(self):
        if self.max_covariates < 0:
            raise ConfigError("max_covariates must be non-negative")
        if self.bootstrap_b < 100:
            raise ConfigError("bootstrap B must be at least 100")
        for fam in self.families:
            if fam not in ("lr", "nhgr"):
                raise ConfigError(f"unknown family {fam!r}")
        if not self.responses:
            raise ConfigError("no response quantities configured")
        for name, period in self.test_periods.items():
            if period.overlaps(self.train):
                raise ConfigError(f"test period {name!r} overlaps the train period")

    def period(self, name: str) -> Period:
        if name == "train":
            return self.train
        if name in self.test_periods:
            return self.test_periods[name]
        raise ConfigError(f"unknown period {name!r}")


def _parse_period(doc: dict, what: str) -> Period:
    try:
        return Period(start=parse_time(doc["start"]), end=parse_time(doc["end"]))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad {what} period: {exc}") from exc
    except DataError as exc:
        raise ConfigError(f"bad {what} period: {exc}") from exc


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply --set key=value pairs (dotted paths, JSON-parsed values)."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set path {key!r} crosses a non-object value")
        node[parts[-1]] = value
    return doc


def load_run_config(
    path: str | Path,
    overrides: list[str] | None = None,
    out: str | None = None,
    seed: int | None = None,
    bootstrap: int | None = None,
    jobs: int | None = None,
) -> RunConfig:
    """Read and validate a run-config JSON file, with CLI-level overrides."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    doc = apply_overrides(doc, overrides or [])
    if out is not None:
        doc["out"] = out
    if seed is not None:
        doc["seed"] = seed
    if bootstrap is not None:
        doc["bootstrap_b"] = bootstrap
    if jobs is not None:
        doc["jobs"] = jobs
    return run_config_from_dict(doc, base_dir=path.parent)


def run_config_from_dict(doc: dict, base_dir: Path) -> RunConfig:
    try:
        quantities = dict(DEFAULT_QUANTITIES)
        for code, unit in doc.get("quantities", {}).items():
            quantities[code] = Quantity(code, unit)
        responses = tuple(quantities[code] for code in doc["responses"])
        qlist = [quantities[c] for c in doc.get("quantities", {})] or list(quantities.values())

        pools: dict[str, tuple[CovariateId, ...]] = {}
        pool_doc = doc.get("covariate_pool", "default")
        for resp in responses:
            if pool_doc == "default":
                pools[resp.code] = tuple(default_pool(resp, qlist))
            else:
                labels = pool_doc[resp.code]
                pools[resp.code] = tuple(parse_covariate(lbl, quantities) for lbl in labels)

        return RunConfig(
            forecasts=(base_dir / doc["forecasts"]).resolve(),
            measurements=(base_dir / doc["measurements"]).resolve(),
            out=(base_dir / doc["out"]).resolve() if "out" in doc else (base_dir / "out").resolve(),
            quantities=quantities,
            responses=responses,
            pools=pools,
            train=_parse_period(doc["train"], "train"),
            test_periods={
                name: _parse_period(p, name) for name, p in doc.get("test_periods", {}).items()
            },
            families=tuple(doc.get("families", ["lr", "nhgr"])),
            max_covariates=int(doc.get("max_covariates", 3)),
            standardize=bool(doc.get("standardize", True)),
            bootstrap_b=int(doc.get("bootstrap_b", 1000)),
            seed=int(doc.get("seed", 0)),
            jobs=int(doc.get("jobs", 1)),
            per_row_crps=bool(doc.get("per_row_crps", False)),
        )
    except KeyError as exc:
        raise ConfigError(f"config is missing required key {exc}") from exc
    except (TypeError, ValueError, DataError) as exc:
        raise ConfigError(f"bad config: {exc}") from exc
