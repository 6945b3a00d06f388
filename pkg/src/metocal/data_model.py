"""Domain types, file ingestion, and forecast/measurement alignment.

Forecast data live on an (issue time, horizon) grid: a bundle issued at time
t contains, for each horizon tau and physical quantity, a deterministic
forecast, a control forecast and a set of exchangeable ensemble members. The
verifying measurement for (t, tau) is the one recorded at t + tau.

Ingestion returns columnar tables that behave as collections of validated
records; `align` joins them into a per-(response, horizon) regression-ready
dataset with complete-case filtering.
"""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

from metocal.ensemble import summarize_ensemble
from metocal.errors import DataError

_CODE_RE = re.compile(r"^[a-z][a-z0-9]*$")
_TIME_FMT = "%Y-%m-%dT%H:%MZ"

FORECAST_HEADER = ["issue_time", "horizon_hours", "quantity", "component", "value"]
MEASUREMENT_HEADER = ["time", "quantity", "value"]

KIND_DET = "det"
KIND_CTRL = "ctrl"
KIND_ENS_MEAN = "ens_mean"
COVARIATE_KINDS = (KIND_DET, KIND_CTRL, KIND_ENS_MEAN)

_COMP_DET = 0
_COMP_CTRL = 1
_COMP_ENS = 2


@dataclass(frozen=True)
class Quantity:
    """A measured physical quantity, e.g. hs [m], w [m/s], tm [s]."""

    code: str
    unit: str

    def __post_init__(self):
        if not _CODE_RE.match(self.code):
            raise DataError(f"quantity code {self.code!r} must match [a-z][a-z0-9]*")


DEFAULT_QUANTITIES: dict[str, Quantity] = {
    "hs": Quantity("hs", "m"),
    "w": Quantity("w", "m/s"),
    "tm": Quantity("tm", "s"),
}


def parse_time(text: str) -> int:
    """Parse an ISO-8601 UTC timestamp (YYYY-MM-DDTHH:MMZ) to epoch hours."""
    try:
        dt = datetime.strptime(text, _TIME_FMT).replace(tzinfo=timezone.utc)
    except ValueError as exc:
        raise DataError(f"bad timestamp {text!r}: {exc}") from None
    if dt.minute != 0:
        raise DataError(f"timestamp {text!r} is not hour-aligned (minutes must be 00)")
    return int(dt.timestamp()) // 3600


def format_time(epoch_hours: int) -> str:
    """Inverse of parse_time."""
    return datetime.fromtimestamp(epoch_hours * 3600, tz=timezone.utc).strftime(_TIME_FMT)


def to_datetime(epoch_hours: int) -> datetime:
    return datetime.fromtimestamp(epoch_hours * 3600, tz=timezone.utc)


@dataclass(frozen=True)
class Component:
    """Forecast component: deterministic, control, or ensemble member k."""

    kind: str
    member: int | None = None

    def __post_init__(self):
        if self.kind not in ("det", "ctrl", "ens"):
            raise DataError(f"unknown component kind {self.kind!r}")
        if self.kind == "ens":
            if self.member is None or self.member < 1:
                raise DataError("ensemble component needs a 1-based member index")
        elif self.member is not None:
            raise DataError(f"{self.kind} component takes no member index")

    @classmethod
    def parse(cls, text: str) -> "Component":
        if text == "det":
            return cls("det")
        if text == "ctrl":
            return cls("ctrl")
        if text.startswith("ens") and text[3:].isdigit():
            return cls("ens", int(text[3:]))
        raise DataError(f"bad component {text!r} (expected det, ctrl or ens<k>)")

    def __str__(self) -> str:
        return self.kind if self.kind != "ens" else f"ens{self.member}"


@dataclass(frozen=True)
class ForecastRecord:
    """One forecast component value keyed by (issue time, horizon, quantity, component)."""

    issue_time: int  # epoch hours, UTC
    horizon: int  # hours
    quantity: Quantity
    component: Component
    value: float

    def __post_init__(self):
        if self.horizon < 0:
            raise DataError(f"horizon must be non-negative, got {self.horizon}")
        if not np.isfinite(self.value):
            raise DataError("forecast value must be finite")


@dataclass(frozen=True)
class MeasurementRecord:
    """One measured value at an hour-aligned UTC time."""

    time: int  # epoch hours, UTC
    quantity: Quantity
    value: float

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise DataError("measured value must be finite")


@dataclass(frozen=True)
class CovariateId:
    """Identity of a legal calibration covariate.

    Only permutation-invariant ensemble summaries are allowed, so the kind
    is one of det, ctrl, ens_mean -- never an individual member.
    """

    quantity: Quantity
    kind: str

    def __post_init__(self):
        if self.kind not in COVARIATE_KINDS:
            raise DataError(f"covariate kind must be one of {COVARIATE_KINDS}, got {self.kind!r}")

    @property
    def label(self) -> str:
        return f"{self.kind}_{self.quantity.code}"

    def __str__(self) -> str:
        return self.label


def parse_covariate(label: str, quantities: Mapping[str, Quantity]) -> CovariateId:
    """Parse a covariate label like 'det_hs' or 'ens_mean_w'."""
    for kind in COVARIATE_KINDS:
        prefix = kind + "_"
        if label.startswith(prefix):
            code = label[len(prefix):]
            if code in quantities:
                return CovariateId(quantities[code], kind)
    raise DataError(f"bad covariate label {label!r}")


class ForecastTable:
    """Columnar collection of validated ForecastRecords.

    Column-oriented so that multi-million-row scenarios stay cheap to hold
    and join; iteration materializes records on demand.
    """

    def __init__(self, times, horizons, qidx, comp, member, values, quantities):
        self.times = np.asarray(times, dtype=np.int64)
        self.horizons = np.asarray(horizons, dtype=np.int32)
        self.qidx = np.asarray(qidx, dtype=np.int16)
        self.comp = np.asarray(comp, dtype=np.int8)
        self.member = np.asarray(member, dtype=np.int32)
        self.values = np.asarray(values, dtype=np.float64)
        self.quantities: tuple[Quantity, ...] = tuple(quantities)
        n = len(self.values)
        for arr in (self.times, self.horizons, self.qidx, self.comp, self.member):
            if len(arr) != n:
                raise DataError("forecast table columns must share one length")
            arr.setflags(write=False)
        self.values.setflags(write=False)
        self._validate()

    def _validate(self):
        if len(self.values) == 0:
            return
        if not np.all(np.isfinite(self.values)):
            raise DataError("forecast table contains a non-finite value")
        if self.horizons.min(initial=0) < 0:
            raise DataError("forecast table contains a negative horizon")
        # key packing limits (generous for this domain)
        if self.times.min() < 0 or self.times.max() >= (1 << 29):
            raise DataError("issue times outside the supported range")
        if self.horizons.max(initial=0) >= 1024 or self.member.max(initial=0) >= (1 << 14):
            raise DataError("horizon or member index outside the supported range")
        key = self._keys()
        uniq, counts = np.unique(key, return_counts=True)
        if np.any(counts > 1):
            k = int(uniq[np.argmax(counts > 1)])
            raise DataError(f"duplicate forecast key: {self._describe_key(k)}")

    def _keys(self) -> np.ndarray:
        # (time, horizon, quantity, component kind, member) packed into int64
        return (
            (self.times.astype(np.int64) << 34)
            | (self.horizons.astype(np.int64) << 24)
            | (self.qidx.astype(np.int64) << 16)
            | (self.comp.astype(np.int64) << 14)
            | self.member.astype(np.int64)
        )

    def _describe_key(self, key: int) -> str:
        t = key >> 34
        h = (key >> 24) & 0x3FF
        q = (key >> 16) & 0xFF
        c = (key >> 14) & 0x3
        m = key & 0x3FFF
        comp = {_COMP_DET: "det", _COMP_CTRL: "ctrl"}.get(int(c), f"ens{int(m)}")
        return f"({format_time(int(t))}, h={int(h)}, {self.quantities[int(q)].code}, {comp})"

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self) -> Iterator[ForecastRecord]:
        for i in range(len(self.values)):
            kind = {_COMP_DET: "det", _COMP_CTRL: "ctrl", _COMP_ENS: "ens"}[int(self.comp[i])]
            member = int(self.member[i]) if kind == "ens" else None
            yield ForecastRecord(
                issue_time=int(self.times[i]),
                horizon=int(self.horizons[i]),
                quantity=self.quantities[self.qidx[i]],
                component=Component(kind, member),
                value=float(self.values[i]),
            )

    def horizon_grid(self) -> list[int]:
        """Distinct horizons present, ascending (discovered, not hard-coded)."""
        return [int(h) for h in np.unique(self.horizons)]

    def issue_times(self) -> np.ndarray:
        return np.unique(self.times)

    @classmethod
    def from_records(cls, records: Iterable[ForecastRecord]) -> "ForecastTable":
        recs = list(records)
        quantities: list[Quantity] = []
        qmap: dict[str, int] = {}
        cols: tuple[list, ...] = ([], [], [], [], [], [])
        for r in recs:
            if r.quantity.code not in qmap:
                qmap[r.quantity.code] = len(quantities)
                quantities.append(r.quantity)
            comp = {"det": _COMP_DET, "ctrl": _COMP_CTRL, "ens": _COMP_ENS}[r.component.kind]
            cols[0].append(r.issue_time)
            cols[1].append(r.horizon)
            cols[2].append(qmap[r.quantity.code])
            cols[3].append(comp)
            cols[4].append(r.component.member or 0)
            cols[5].append(r.value)
        return cls(*cols, quantities)


class MeasurementTable:
    """Columnar collection of validated MeasurementRecords."""

    def __init__(self, times, qidx, values, quantities):
        self.times = np.asarray(times, dtype=np.int64)
        self.qidx = np.asarray(qidx, dtype=np.int16)
        self.values = np.asarray(values, dtype=np.float64)
        self.quantities: tuple[Quantity, ...] = tuple(quantities)
        if not (len(self.times) == len(self.qidx) == len(self.values)):
            raise DataError("measurement table columns must share one length")
        for arr in (self.times, self.qidx, self.values):
            arr.setflags(write=False)
        if len(self.values):
            if not np.all(np.isfinite(self.values)):
                raise DataError("measurement table contains a non-finite value")
            key = (self.times << 8) | self.qidx.astype(np.int64)
            uniq, counts = np.unique(key, return_counts=True)
            if np.any(counts > 1):
                k = int(uniq[np.argmax(counts > 1)])
                code = self.quantities[int(k & 0xFF)].code
                raise DataError(f"duplicate measurement at ({format_time(int(k >> 8))}, {code})")

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self) -> Iterator[MeasurementRecord]:
        for i in range(len(self.values)):
            yield MeasurementRecord(
                time=int(self.times[i]),
                quantity=self.quantities[self.qidx[i]],
                value=float(self.values[i]),
            )

    @classmethod
    def from_records(cls, records: Iterable[MeasurementRecord]) -> "MeasurementTable":
        recs = list(records)
        quantities: list[Quantity] = []
        qmap: dict[str, int] = {}
        times, qidx, values = [], [], []
        for r in recs:
            if r.quantity.code not in qmap:
                qmap[r.quantity.code] = len(quantities)
                quantities.append(r.quantity)
            times.append(r.time)
            qidx.append(qmap[r.quantity.code])
            values.append(r.value)
        return cls(times, qidx, values, quantities)


def _open_rows(source) -> tuple[Iterator[tuple[int, list[str]]], bool]:
    """Yield (line_number, row) pairs from a path, file object, or line iterable."""
    if isinstance(source, (str, Path)):
        try:
            fh = open(source, "r", newline="")
        except OSError as exc:
            raise DataError(f"cannot read {source}: {exc}") from exc
        own = True
    elif isinstance(source, io.TextIOBase) or hasattr(source, "read"):
        fh = source
        own = False
    else:
        fh = iter(source)
        own = False

    def gen():
        reader = csv.reader(fh)
        try:
            for lineno, row in enumerate(reader, start=1):
                if not row or (row[0].startswith("#")):
                    continue
                yield lineno, row
        finally:
            if own:
                fh.close()

    return gen(), own


def ingest_forecasts(source, quantities: Mapping[str, Quantity] | None = None) -> ForecastTable:
    """Read a forecast CSV stream into a validated ForecastTable.

    Expected header: issue_time,horizon_hours,quantity,component,value with
    component in {det, ctrl, ens<k>}. `#`-prefixed lines are comments.
    Raises DataError with the offending line number on malformed rows,
    unknown quantity codes, negative horizons, and duplicate keys.
    """
    qmap = dict(quantities or DEFAULT_QUANTITIES)
    qlist = list(qmap.values())
    qindex = {q.code: i for i, q in enumerate(qlist)}

    rows, _ = _open_rows(source)
    try:
        lineno, header = next(rows)
    except StopIteration:
        raise DataError("empty forecast file") from None
    if [h.strip() for h in header] != FORECAST_HEADER:
        raise DataError(f"line {lineno}: bad header {header!r}, expected {','.join(FORECAST_HEADER)}")

    times, horizons, qidx, comp, member, values = [], [], [], [], [], []
    comp_codes = {"det": (_COMP_DET, 0), "ctrl": (_COMP_CTRL, 0)}
    for lineno, row in rows:
        if len(row) != 5:
            raise DataError(f"line {lineno}: expected 5 fields, got {len(row)}")
        t_raw, h_raw, q_raw, c_raw, v_raw = (f.strip() for f in row)
        try:
            t = parse_time(t_raw)
            h = int(h_raw)
            if h < 0:
                raise DataError(f"negative horizon {h}")
            if q_raw not in qindex:
                raise DataError(f"unknown quantity code {q_raw!r}")
            if c_raw in comp_codes:
                ck, mem = comp_codes[c_raw]
            else:
                c = Component.parse(c_raw)
                ck, mem = _COMP_ENS, c.member
            v = float(v_raw)
            if not np.isfinite(v):
                raise DataError(f"non-finite value {v_raw!r}")
        except DataError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        times.append(t)
        horizons.append(h)
        qidx.append(qindex[q_raw])
        comp.append(ck)
        member.append(mem)
        values.append(v)
    return ForecastTable(times, horizons, qidx, comp, member, values, qlist)


def ingest_measurements(source, quantities: Mapping[str, Quantity] | None = None) -> MeasurementTable:
    """Read a measurement CSV stream (header: time,quantity,value)."""
    qmap = dict(quantities or DEFAULT_QUANTITIES)
    qlist = list(qmap.values())
    qindex = {q.code: i for i, q in enumerate(qlist)}

    rows, _ = _open_rows(source)
    try:
        lineno, header = next(rows)
    except StopIteration:
        raise DataError("empty measurement file") from None
    if [h.strip() for h in header] != MEASUREMENT_HEADER:
        raise DataError(f"line {lineno}: bad header {header!r}, expected {','.join(MEASUREMENT_HEADER)}")

    times, qidx, values = [], [], []
    for lineno, row in rows:
        if len(row) != 3:
            raise DataError(f"line {lineno}: expected 3 fields, got {len(row)}")
        t_raw, q_raw, v_raw = (f.strip() for f in row)
        try:
            t = parse_time(t_raw)
            if q_raw not in qindex:
                raise DataError(f"unknown quantity code {q_raw!r}")
            v = float(v_raw)
            if not np.isfinite(v):
                raise DataError(f"non-finite value {v_raw!r}")
        except DataError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        times.append(t)
        qidx.append(qindex[q_raw])
        values.append(v)
    return MeasurementTable(times, qidx, values, qlist)


@dataclass(frozen=True)
class AlignedDataset:
    """Regression-ready rows for one (response quantity, horizon) pair.

    y[i] is the measurement at times[i] + horizon; columns hold the covariate
    vectors; ens_sd is the response-quantity ensemble standard deviation.
    Rows with any missing value are removed (complete-case), and all arrays
    are read-only and index-aligned with times (sorted ascending).
    """

    response: Quantity
    horizon: int
    times: np.ndarray
    y: np.ndarray
    columns: dict[CovariateId, np.ndarray] = field(repr=False)
    ens_sd: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = len(self.times)
        if n < 1:
            raise DataError("aligned dataset is empty")
        for arr in [self.y, self.ens_sd, *self.columns.values()]:
            if len(arr) != n:
                raise DataError("aligned vectors must share one length")
        if np.any(self.ens_sd < 0):
            raise DataError("ensemble sd must be non-negative")
        for arr in [self.times, self.y, self.ens_sd, *self.columns.values()]:
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.times)

    def issue_datetimes(self) -> list[datetime]:
        return [to_datetime(int(t)) for t in self.times]


def _series_lookup(times: np.ndarray, values: np.ndarray, at: np.ndarray) -> np.ndarray:
    """Look up values at the requested times; NaN where absent. times must be sorted."""
    out = np.full(len(at), np.nan)
    pos = np.searchsorted(times, at)
    ok = (pos < len(times)) & (times[np.minimum(pos, len(times) - 1)] == at)
    out[ok] = values[pos[ok]]
    return out


def align(
    forecasts: ForecastTable,
    measurements: MeasurementTable,
    response: Quantity,
    horizon: int,
    covariate_pool: list[CovariateId],
) -> AlignedDataset:
    """Join forecasts with measured reality at one horizon.

    For each issue time t with complete data, the row pairs the covariates
    derived from the forecast bundle (t, horizon) with the measurement at
    t + horizon. Ensemble means/sds are computed via summarize_ensemble and
    require at least two members; the ensemble sd of the response quantity
    is always attached. Output rows are sorted by issue time.
    """
    fq = {q.code: i for i, q in enumerate(forecasts.quantities)}
    if response.code not in fq:
        raise DataError(f"response quantity {response.code!r} absent from forecasts")
    hmask = forecasts.horizons == horizon
    if not np.any(hmask):
        raise DataError(f"horizon {horizon} not present in the forecast grid")

    issues = np.unique(forecasts.times[hmask])
    ncand = len(issues)

    def component_column(q: Quantity, comp_code: int) -> np.ndarray:
        if q.code not in fq:
            raise DataError(f"covariate quantity {q.code!r} never present in forecasts")
        m = hmask & (forecasts.qidx == fq[q.code]) & (forecasts.comp == comp_code)
        if not np.any(m):
            raise DataError(
                f"covariate component absent from forecasts: quantity={q.code} "
                f"comp={'det' if comp_code == _COMP_DET else 'ctrl'} horizon={horizon}"
            )
        t = forecasts.times[m]
        order = np.argsort(t, kind="stable")
        return _series_lookup(t[order], forecasts.values[m][order], issues)

    ens_cache: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def ensemble_columns(q: Quantity) -> tuple[np.ndarray, np.ndarray]:
        if q.code in ens_cache:
            return ens_cache[q.code]
        if q.code not in fq:
            raise DataError(f"covariate quantity {q.code!r} never present in forecasts")
        m = hmask & (forecasts.qidx == fq[q.code]) & (forecasts.comp == _COMP_ENS)
        if not np.any(m):
            raise DataError(f"no ensemble members for quantity={q.code} at horizon={horizon}")
        t = forecasts.times[m]
        v = forecasts.values[m]
        order = np.argsort(t, kind="stable")
        t, v = t[order], v[order]
        bounds = np.searchsorted(t, issues, side="left"), np.searchsorted(t, issues, side="right")
        mean = np.full(ncand, np.nan)
        sd = np.full(ncand, np.nan)
        for i in range(ncand):
            lo, hi = bounds[0][i], bounds[1][i]
            if hi - lo >= 2:
                s = summarize_ensemble(v[lo:hi])
                mean[i] = s.mean
                sd[i] = s.sd
        out = (mean, sd)
        ens_cache[q.code] = out
        return out

    columns: dict[CovariateId, np.ndarray] = {}
    for cov in covariate_pool:
        if cov.kind == KIND_DET:
            columns[cov] = component_column(cov.quantity, _COMP_DET)
        elif cov.kind == KIND_CTRL:
            columns[cov] = component_column(cov.quantity, _COMP_CTRL)
        else:
            columns[cov] = ensemble_columns(cov.quantity)[0]

    ens_sd = ensemble_columns(response)[1]

    mq = {q.code: i for i, q in enumerate(measurements.quantities)}
    if response.code not in mq:
        raise DataError(f"response quantity {response.code!r} absent from measurements")
    mm = measurements.qidx == mq[response.code]
    mt = measurements.times[mm]
    mv = measurements.values[mm]
    order = np.argsort(mt, kind="stable")
    y = _series_lookup(mt[order], mv[order], issues + horizon)

    keep = np.isfinite(y) & np.isfinite(ens_sd)
    for colv in columns.values():
        keep &= np.isfinite(colv)
    if not np.any(keep):
        raise DataError(
            f"no complete rows for response={response.code} horizon={horizon} after alignment"
        )
    return AlignedDataset(
        response=response,
        horizon=horizon,
        times=issues[keep].copy(),
        y=y[keep],
        columns={cov: colv[keep] for cov, colv in columns.items()},
        ens_sd=ens_sd[keep],
    )
