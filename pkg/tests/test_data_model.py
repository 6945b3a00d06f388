import io

import numpy as np
import pytest

from metocal.data_model import (
    KIND_CTRL,
    KIND_DET,
    KIND_ENS_MEAN,
    Component,
    CovariateId,
    ForecastRecord,
    ForecastTable,
    MeasurementRecord,
    MeasurementTable,
    Quantity,
    align,
    format_time,
    ingest_forecasts,
    ingest_measurements,
    parse_covariate,
    parse_time,
)
from metocal.errors import DataError

HS = Quantity("hs", "m")
W = Quantity("w", "m/s")


def fcast_csv(rows):
    return io.StringIO("issue_time,horizon_hours,quantity,component,value\n" + "\n".join(rows))


def meas_csv(rows):
    return io.StringIO("time,quantity,value\n" + "\n".join(rows))


class TestIngestForecasts:
    def test_single_row(self):
        table = ingest_forecasts(fcast_csv(["2022-05-17T00:00Z,24,hs,det,2.31"]))
        (rec,) = list(table)
        assert rec.horizon == 24
        assert rec.quantity.code == "hs"
        assert rec.component == Component("det")
        assert rec.value == 2.31
        assert format_time(rec.issue_time) == "2022-05-17T00:00Z"

    def test_duplicate_key_rejected(self):
        rows = ["2022-05-17T00:00Z,24,hs,det,2.31", "2022-05-17T00:00Z,24,hs,det,2.35"]
        with pytest.raises(DataError, match="duplicate"):
            ingest_forecasts(fcast_csv(rows))

    def test_negative_horizon(self):
        with pytest.raises(DataError, match="line 2"):
            ingest_forecasts(fcast_csv(["2022-05-17T00:00Z,-3,hs,det,2.31"]))

    def test_unknown_quantity(self):
        with pytest.raises(DataError, match="unknown quantity"):
            ingest_forecasts(fcast_csv(["2022-05-17T00:00Z,24,xx,det,2.31"]))

    def test_malformed_row_reports_line(self):
        rows = ["2022-05-17T00:00Z,24,hs,det,2.31", "2022-05-17T00:00Z,24,hs,det"]
        with pytest.raises(DataError, match="line 3"):
            ingest_forecasts(fcast_csv(rows))

    def test_comments_and_ens_members(self):
        rows = [
            "# a comment",
            "2022-05-17T00:00Z,24,hs,ens1,2.0",
            "2022-05-17T00:00Z,24,hs,ens2,2.4",
        ]
        table = ingest_forecasts(fcast_csv(rows))
        assert len(table) == 2
        assert {r.component.member for r in table} == {1, 2}

    def test_bad_component(self):
        with pytest.raises(DataError, match="component"):
            ingest_forecasts(fcast_csv(["2022-05-17T00:00Z,24,hs,ens0,2.0"]))


class TestIngestMeasurements:
    def test_hourly_series(self):
        rows = [f"2022-05-17T{h:02d}:00Z,hs,2.{h}" for h in range(3)]
        table = ingest_measurements(meas_csv(rows))
        assert len(table) == 3

    def test_non_hourly_timestamp(self):
        with pytest.raises(DataError, match="hour-aligned"):
            ingest_measurements(meas_csv(["2022-05-17T00:30Z,hs,2.0"]))

    def test_nan_value(self):
        with pytest.raises(DataError, match="non-finite"):
            ingest_measurements(meas_csv(["2022-05-17T00:00Z,hs,nan"]))

    def test_duplicate(self):
        rows = ["2022-05-17T00:00Z,hs,2.0", "2022-05-17T00:00Z,hs,2.1"]
        with pytest.raises(DataError, match="duplicate"):
            ingest_measurements(meas_csv(rows))


def bundle(issue: str, horizon: int, det=None, members=(), quantity="hs"):
    rows = []
    if det is not None:
        rows.append(f"{issue},{horizon},{quantity},det,{det}")
    for k, v in enumerate(members, start=1):
        rows.append(f"{issue},{horizon},{quantity},ens{k},{v}")
    return rows


class TestAlign:
    def test_two_full_rows(self):
        fc = ingest_forecasts(fcast_csv(
            bundle("2022-05-17T00:00Z", 24, det=2.0, members=(1.9, 2.1))
            + bundle("2022-05-17T06:00Z", 24, det=2.2, members=(2.0, 2.6))
        ))
        ms = ingest_measurements(meas_csv([
            "2022-05-18T00:00Z,hs,2.05",
            "2022-05-18T06:00Z,hs,2.31",
        ]))
        pool = [CovariateId(HS, KIND_DET)]
        data = align(fc, ms, HS, 24, pool)
        assert data.n == 2
        assert list(data.columns[pool[0]]) == [2.0, 2.2]
        assert list(data.y) == [2.05, 2.31]

    def test_missing_measurement_drops_row(self):
        fc = ingest_forecasts(fcast_csv(
            bundle("2022-05-17T00:00Z", 24, det=2.0, members=(1.9, 2.1))
            + bundle("2022-05-17T06:00Z", 24, det=2.2, members=(2.0, 2.6))
            + bundle("2022-05-17T12:00Z", 24, det=2.4, members=(2.2, 2.8))
        ))
        ms = ingest_measurements(meas_csv([
            "2022-05-18T00:00Z,hs,2.05",
            "2022-05-18T12:00Z,hs,2.44",
        ]))
        data = align(fc, ms, HS, 24, [CovariateId(HS, KIND_DET)])
        assert data.n == 2

    def test_missing_covariate_errors(self):
        fc = ingest_forecasts(fcast_csv(bundle("2022-05-17T00:00Z", 24, det=2.0, members=(1.9, 2.1))))
        ms = ingest_measurements(meas_csv(["2022-05-18T00:00Z,hs,2.05"]))
        with pytest.raises(DataError, match="ensemble"):
            align(fc, ms, HS, 24, [CovariateId(W, KIND_ENS_MEAN)])

    def test_lookup_reproduces_measurement_exactly(self):
        fc = ingest_forecasts(fcast_csv(bundle("2022-05-17T00:00Z", 24, det=2.0, members=(1.9, 2.1))))
        ms = ingest_measurements(meas_csv(["2022-05-18T00:00Z,hs,2.0500000000000003"]))
        data = align(fc, ms, HS, 24, [CovariateId(HS, KIND_DET)])
        raw = {(int(r.time), r.quantity.code): r.value for r in ms}
        for t, yv in zip(data.times, data.y):
            assert raw[(int(t) + 24, "hs")] == yv  # bit-exact

    def test_alignment_pure_and_order_free(self):
        rows = (
            bundle("2022-05-17T06:00Z", 24, det=2.2, members=(2.0, 2.6, 2.4))
            + bundle("2022-05-17T00:00Z", 24, det=2.0, members=(1.9, 2.1, 2.2))
        )
        fc1 = ingest_forecasts(fcast_csv(rows))
        fc2 = ingest_forecasts(fcast_csv(list(reversed(rows))))
        ms = ingest_measurements(meas_csv([
            "2022-05-18T06:00Z,hs,2.31",
            "2022-05-18T00:00Z,hs,2.05",
        ]))
        pool = [CovariateId(HS, KIND_DET), CovariateId(HS, KIND_ENS_MEAN)]
        d1 = align(fc1, ms, HS, 24, pool)
        d2 = align(fc2, ms, HS, 24, pool)
        assert np.array_equal(d1.times, d2.times)
        assert np.array_equal(d1.y, d2.y)
        assert np.array_equal(d1.ens_sd, d2.ens_sd)
        for cov in pool:
            assert np.array_equal(d1.columns[cov], d2.columns[cov])
        assert list(d1.times) == sorted(d1.times)

    def test_min_two_members_for_ensemble(self):
        fc = ingest_forecasts(fcast_csv(
            bundle("2022-05-17T00:00Z", 24, det=2.0, members=(1.9, 2.1))
            + bundle("2022-05-17T06:00Z", 24, det=2.2, members=(2.0,))
        ))
        ms = ingest_measurements(meas_csv([
            "2022-05-18T00:00Z,hs,2.05",
            "2022-05-18T06:00Z,hs,2.31",
        ]))
        data = align(fc, ms, HS, 24, [CovariateId(HS, KIND_ENS_MEAN)])
        assert data.n == 1  # single-member row dropped


class TestTypes:
    def test_record_validation(self):
        with pytest.raises(DataError):
            ForecastRecord(400000, -1, HS, Component("det"), 1.0)
        with pytest.raises(DataError):
            MeasurementRecord(400000, HS, float("inf"))

    def test_component_parse_roundtrip(self):
        for text in ("det", "ctrl", "ens7"):
            assert str(Component.parse(text)) == text

    def test_covariate_label_roundtrip(self):
        quantities = {"hs": HS, "w": W}
        for cov in (CovariateId(HS, KIND_DET), CovariateId(W, KIND_ENS_MEAN), CovariateId(HS, KIND_CTRL)):
            assert parse_covariate(cov.label, quantities) == cov

    def test_time_roundtrip(self):
        t = parse_time("2023-09-06T18:00Z")
        assert format_time(t) == "2023-09-06T18:00Z"

    def test_tables_are_immutable(self):
        table = ingest_forecasts(fcast_csv(["2022-05-17T00:00Z,24,hs,det,2.31"]))
        with pytest.raises(ValueError):
            table.values[0] = 9.9

    def test_horizon_grid_discovered(self):
        rows = [
            "2022-05-17T00:00Z,0,hs,det,2.0",
            "2022-05-17T00:00Z,72,hs,det,2.1",
            "2022-05-17T00:00Z,78,hs,det,2.2",
        ]
        assert ingest_forecasts(fcast_csv(rows)).horizon_grid() == [0, 72, 78]
