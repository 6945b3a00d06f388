"""Command-line pipeline: simulate, fit, select, diagnose, predict, report.

Stages communicate only through persisted artifacts under the output
directory, so each is re-entrant:

    models/        one JSON bundle per (response, family, horizon)
    selection/     AIC tables, optimal/consistent specs, barcode CSVs
    diagnostics/   per-period verification summaries and rank histograms
    predictions/   calibrated forecasts for one issue time
    manifest.json  sha256 of every artifact

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from metocal import artifacts
from metocal.config import RunConfig, load_run_config
from metocal.data_model import (
    KIND_DET,
    AlignedDataset,
    CovariateId,
    ForecastTable,
    MeasurementTable,
    align,
    format_time,
    ingest_forecasts,
    ingest_measurements,
    parse_covariate,
    parse_time,
)
from metocal.diagnostics import (
    bootstrap_ci,
    bootstrap_model_ci,
    crps_gaussian,
    error_stats,
    ks_test,
    parameter_names,
    parameter_values,
    pit_histogram_from_values,
)
from metocal.ensemble import summarize_ensemble
from metocal.errors import ConfigError, DataError, FitError, MetocalError
from metocal.regression import (
    FittedModel,
    ModelSpec,
    fit_lr,
    fit_nhgr,
    model_from_dict,
    model_to_dict,
    predict,
    predictive_params,
)
from scipy.special import ndtr
from metocal.selection import (
    SelectionResult,
    barcode_csv,
    enumerate_specs,
    selection_from_aic_tables,
    selection_to_dict,
)
from metocal.synthgen import generate, scenario_from_dict, truth_record

def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _cell_seed(seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, np.uint64)[0])


def _filter_period(fc: ForecastTable, ms: MeasurementTable, period) -> tuple[ForecastTable, MeasurementTable]:
    fmask = (fc.times >= period.start) & (fc.times <= period.end)
    mmask = (ms.times >= period.start) & (ms.times <= period.end)
    fc2 = ForecastTable(
        fc.times[fmask], fc.horizons[fmask], fc.qidx[fmask],
        fc.comp[fmask], fc.member[fmask], fc.values[fmask], fc.quantities,
    )
    ms2 = MeasurementTable(ms.times[mmask], ms.qidx[mmask], ms.values[mmask], ms.quantities)
    return fc2, ms2


def _load_period(config: RunConfig, period_name: str) -> tuple[ForecastTable, MeasurementTable]:
    fc = ingest_forecasts(config.forecasts, config.quantities)
    ms = ingest_measurements(config.measurements, config.quantities)
    period = config.period(period_name)
    fc2, ms2 = _filter_period(fc, ms, period)
    if len(fc2) == 0 or len(ms2) == 0:
        raise DataError(
            f"period {period_name!r} ({format_time(period.start)} .. {format_time(period.end)}) "
            "contains no data after filtering"
        )
    return fc2, ms2


def _bundle_path(out: Path, resp_code: str, family: str, horizon: int) -> Path:
    return out / "models" / f"{resp_code}_{family}_h{horizon:03d}.json"


# ---------------------------------------------------------------- simulate

def run_simulate(config_path: str, out: str, seed: int | None, overrides: list[str]) -> None:
    from metocal.config import apply_overrides

    doc = artifacts.read_json(Path(config_path))
    apply_overrides(doc, overrides)
    if seed is not None:
        doc["seed"] = seed
    scenario = scenario_from_dict(doc)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    fc, ms, truth = generate(scenario)
    _log(f"simulate: {len(fc)} forecast rows, {len(ms)} measurement rows")

    fpath = out_dir / "forecasts.csv"
    with open(fpath, "w", encoding="utf-8") as fh:
        fh.write("issue_time,horizon_hours,quantity,component,value\n")
        comp_names = {0: "det", 1: "ctrl"}
        for i in range(len(fc)):
            comp = comp_names.get(int(fc.comp[i]), f"ens{int(fc.member[i])}")
            fh.write(
                f"{format_time(int(fc.times[i]))},{int(fc.horizons[i])},"
                f"{fc.quantities[fc.qidx[i]].code},{comp},{float(fc.values[i])!r}\n"
            )
    mpath = out_dir / "measurements.csv"
    with open(mpath, "w", encoding="utf-8") as fh:
        fh.write("time,quantity,value\n")
        for i in range(len(ms)):
            fh.write(
                f"{format_time(int(ms.times[i]))},{ms.quantities[ms.qidx[i]].code},{float(ms.values[i])!r}\n"
            )
    artifacts.write_json(out_dir / "truth.json", truth_record(scenario))


# ---------------------------------------------------------------- fit

def _fit_unit(
    data: AlignedDataset, resp, family: str, pool, config: RunConfig
) -> dict[str, dict]:
    specs = enumerate_specs(resp, list(pool), family, config.max_covariates)
    models = {}
    for spec in specs:
        try:
            if family == "lr":
                m = fit_lr(data, spec, standardize_z=config.standardize)
            else:
                m = fit_nhgr(data, spec, standardize_z=config.standardize)
            models[spec.covariate_label] = model_to_dict(m)
        except FitError as exc:
            warnings.warn(f"skipping {spec.label} at horizon {data.horizon}: {exc}", stacklevel=2)
    if not models:
        raise FitError(f"no fittable spec for {resp.code}/{family} at horizon {data.horizon}")
    return models


def run_fit(config: RunConfig, families: tuple[str, ...] | None = None) -> None:
    families = families or config.families
    fc, ms = _load_period(config, "train")
    horizons = fc.horizon_grid()
    out = config.out

    units = []
    for resp in config.responses:
        pool = config.pools[resp.code]
        for h in horizons:
            units.append((resp, h, pool))

    def fit_one(unit):
        resp, h, pool = unit
        try:
            data = align(fc, ms, resp, h, list(pool))
        except DataError as exc:
            raise DataError(f"alignment failed for {resp.code} at horizon {h}: {exc}") from exc
        return {
            family: _fit_unit(data, resp, family, pool, config) for family in families
        }

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool_exec:
            results = list(pool_exec.map(fit_one, units))
    else:
        results = [fit_one(u) for u in units]

    n_models = 0
    for (resp, h, _), by_family in zip(units, results):
        for family, models in by_family.items():
            artifacts.write_json(
                _bundle_path(out, resp.code, family, h),
                {
                    "schema_version": artifacts.SCHEMA_VERSION,
                    "response": resp.code,
                    "family": family,
                    "horizon": h,
                    "models": models,
                },
            )
            n_models += len(models)
    artifacts.write_json(
        out / "models" / "_grid.json",
        {
            "schema_version": artifacts.SCHEMA_VERSION,
            "horizons": horizons,
            "responses": [r.code for r in config.responses],
            "families": list(families),
            "max_covariates": config.max_covariates,
            "pools": {r.code: [c.label for c in config.pools[r.code]] for r in config.responses},
            "quantities": {q.code: q.unit for q in config.quantities.values()},
        },
    )
    artifacts.write_manifest(out)
    _log(f"fit: {n_models} models over {len(horizons)} horizons -> {out / 'models'}")


# ---------------------------------------------------------------- select

def _load_grid(out: Path) -> dict:
    path = out / "models" / "_grid.json"
    if not path.exists():
        raise DataError(f"missing fit artifacts: {path} not found (run `metocal fit` first)")
    return artifacts.read_json(path)


def _selection_for(out: Path, grid: dict, config: RunConfig, resp, family: str) -> SelectionResult:
    pool = [parse_covariate(lbl, config.quantities) for lbl in grid["pools"][resp.code]]
    specs = enumerate_specs(resp, pool, family, int(grid["max_covariates"]))
    aic_table: dict[int, dict[str, float]] = {}
    for h in grid["horizons"]:
        path = _bundle_path(out, resp.code, family, h)
        if not path.exists():
            raise DataError(f"missing fit artifact for {resp.code}/{family} at horizon {h}")
        bundle = artifacts.read_json(path)
        aic_table[int(h)] = {lbl: doc["aic"] for lbl, doc in bundle["models"].items()}
    return selection_from_aic_tables(resp, family, specs, aic_table)


def run_select(config: RunConfig, families: tuple[str, ...] | None = None) -> None:
    out = config.out
    grid = _load_grid(out)
    families = families or tuple(grid["families"])
    consistent_summary = {}
    for resp in config.responses:
        for family in families:
            if family not in grid["families"]:
                continue
            result = _selection_for(out, grid, config, resp, family)
            artifacts.write_json(
                out / "selection" / f"{resp.code}_{family}.json", selection_to_dict(result)
            )
            (out / "selection" / f"{resp.code}_{family}_barcode.csv").write_text(
                barcode_csv(result), encoding="utf-8"
            )
            consistent_summary.setdefault(resp.code, {})[family] = result.consistent.covariate_label
    artifacts.write_json(
        out / "selection" / "consistent.json",
        {"schema_version": artifacts.SCHEMA_VERSION, "consistent": consistent_summary},
    )
    artifacts.write_manifest(out)
    _log(f"select: consistent models -> {out / 'selection' / 'consistent.json'}")


# ---------------------------------------------------------------- diagnose

def _load_consistent_models(out: Path, config: RunConfig, resp, family: str, horizons) -> dict[int, FittedModel]:
    sel = artifacts.read_json(out / "selection" / f"{resp.code}_{family}.json")
    label = sel["consistent"]
    models = {}
    for h in horizons:
        bundle = artifacts.read_json(_bundle_path(out, resp.code, family, h))
        if label not in bundle["models"]:
            raise DataError(f"consistent spec {label!r} missing from {resp.code}/{family} h={h}")
        models[int(h)] = model_from_dict(bundle["models"][label])
    return models


def run_diagnose(config: RunConfig, period_name: str, families: tuple[str, ...] | None = None) -> None:
    out = config.out
    grid = _load_grid(out)
    families = families or tuple(grid["families"])
    fc, ms = _load_period(config, period_name)
    horizons = [h for h in grid["horizons"] if h in set(fc.horizon_grid())]
    if not horizons:
        raise DataError(f"period {period_name!r} shares no horizons with the fitted grid")

    entries = []
    pooled_pit: dict[tuple[str, str], list[np.ndarray]] = {}
    crps_rows = []
    for ri, resp in enumerate(config.responses):
        consistent = {
            family: _load_consistent_models(out, config, resp, family, horizons)
            for family in families
        }
        needed = {CovariateId(resp, KIND_DET)}
        for family in families:
            needed.update(next(iter(consistent[family].values())).spec.mean_covariates)
        pool = sorted(needed, key=lambda c: c.label)
        for h in horizons:
            try:
                data = align(fc, ms, resp, h, pool)
            except DataError as exc:
                raise DataError(
                    f"period {period_name!r}: alignment failed for {resp.code} at horizon {h}: {exc}"
                ) from exc
            det_mu = data.columns[CovariateId(resp, KIND_DET)]
            per_source = {"det": (det_mu, np.zeros(data.n))}
            for family in families:
                per_source[family] = predictive_params(consistent[family][h], data)
            for si, (source, (mu, sigma)) in enumerate(sorted(per_source.items())):
                ok = sigma > 0 if source != "det" else np.ones(data.n, dtype=bool)
                excluded = int(data.n - ok.sum())
                if ok.sum() < 2:
                    raise DataError(
                        f"period {period_name!r}: fewer than 2 usable rows for "
                        f"{resp.code}/{source} at horizon {h}"
                    )
                y, m_, s_ = data.y[ok], mu[ok], sigma[ok]
                bias, err_sd = error_stats(y, m_)
                seed = _cell_seed(config.seed, ri, h, si)
                lo, hi = bootstrap_ci(y - m_, lambda e: float(np.mean(e)), config.bootstrap_b, seed)
                crps_vals = crps_gaussian(y, m_, s_)
                entry = {
                    "response": resp.code,
                    "horizon": h,
                    "source": source,
                    "n": int(ok.sum()),
                    "excluded_rows": excluded,
                    "bias": bias,
                    "err_sd": err_sd,
                    "mean_crps": float(np.mean(crps_vals)),
                    "bias_lo": lo,
                    "bias_hi": hi,
                    "ks_stat": None,
                    "ks_p": None,
                }
                if source != "det":
                    resid = (y - m_) / s_
                    if len(resid) >= 5:
                        d, p = ks_test(resid)
                        entry["ks_stat"] = d
                        entry["ks_p"] = p
                    pooled_pit.setdefault((resp.code, source), []).append(ndtr(resid))
                entries.append(entry)
                if config.per_row_crps:
                    for t, yv, cv in zip(data.times[ok], y, crps_vals):
                        crps_rows.append([resp.code, h, source, format_time(int(t)), yv, float(cv)])

    ddir = out / "diagnostics" / period_name
    artifacts.write_json(
        ddir / "summary.json",
        {"schema_version": artifacts.SCHEMA_VERSION, "period": period_name, "entries": entries},
    )
    header = [
        "response", "horizon", "source", "n", "excluded_rows", "bias", "err_sd",
        "mean_crps", "bias_lo", "bias_hi", "ks_stat", "ks_p",
    ]
    artifacts.write_csv(
        ddir / "summary.csv",
        header,
        [[e[k] for k in header] for e in entries],
    )
    histograms: dict[str, dict[str, dict]] = {}
    for (code, source), chunks in sorted(pooled_pit.items()):
        hist = pit_histogram_from_values(np.concatenate(chunks), 10)
        histograms.setdefault(code, {})[source] = {"counts": list(hist.counts), "n": hist.n}
    artifacts.write_json(
        ddir / "rank_histograms.json",
        {
            "schema_version": artifacts.SCHEMA_VERSION,
            "period": period_name,
            "bin_count": 10,
            "histograms": histograms,
        },
    )
    if config.per_row_crps:
        artifacts.write_csv(
            ddir / "crps_rows.csv",
            ["response", "horizon", "source", "time", "y", "crps"],
            crps_rows,
        )
    artifacts.write_manifest(out)
    _log(f"diagnose[{period_name}]: {len(entries)} rows -> {ddir}")


# ---------------------------------------------------------------- predict

def run_predict(config: RunConfig, issue_time: str, families: tuple[str, ...] | None = None) -> None:
    out = config.out
    grid = _load_grid(out)
    families = families or tuple(grid["families"])
    t = parse_time(issue_time)
    fc = ingest_forecasts(config.forecasts, config.quantities)
    fq = {q.code: i for i, q in enumerate(fc.quantities)}

    def component_value(q, comp_code: int, h: int) -> float:
        m = (
            (fc.times == t) & (fc.horizons == h)
            & (fc.qidx == fq[q.code]) & (fc.comp == comp_code)
        )
        idx = np.flatnonzero(m)
        if len(idx) == 0:
            name = {0: "det", 1: "ctrl"}[comp_code]
            raise DataError(f"missing component {name}:{q.code} at {issue_time} h={h}")
        return float(fc.values[idx[0]])

    def ensemble_value(q, h: int):
        m = (fc.times == t) & (fc.horizons == h) & (fc.qidx == fq[q.code]) & (fc.comp == 2)
        vals = fc.values[np.flatnonzero(m)]
        if len(vals) < 2:
            raise DataError(f"missing ensemble for {q.code} at {issue_time} h={h}")
        s = summarize_ensemble(vals)
        return s.mean, s.sd

    rows = []
    for resp in config.responses:
        consistent = {
            family: _load_consistent_models(out, config, resp, family, grid["horizons"])
            for family in families
        }
        for h in grid["horizons"]:
            det_val = component_value(resp, 0, h)
            _, ens_sd = ensemble_value(resp, h)
            by_source = {"det": (det_val, 0.0)}
            for family in families:
                model = consistent[family][int(h)]
                row = {}
                for cov in model.spec.mean_covariates:
                    if cov.kind == KIND_DET:
                        row[cov] = component_value(cov.quantity, 0, h)
                    elif cov.kind == "ctrl":
                        row[cov] = component_value(cov.quantity, 1, h)
                    else:
                        row[cov] = ensemble_value(cov.quantity, h)[0]
                gf = predict(model, row, ens_sd=ens_sd)
                by_source[family] = (gf.mu, gf.sigma)
            for source, (mu, sigma) in sorted(by_source.items()):
                half = 1.959963984540054 * sigma
                rows.append([resp.code, h, source, mu, sigma, mu - half, mu + half])

    stamp = issue_time.replace(":", "").replace("-", "")
    pdir = out / "predictions"
    artifacts.write_json(
        pdir / f"{stamp}.json",
        {
            "schema_version": artifacts.SCHEMA_VERSION,
            "issue_time": issue_time,
            "entries": [
                dict(zip(["response", "horizon", "source", "mu", "sigma", "lo95", "hi95"], r))
                for r in rows
            ],
        },
    )
    artifacts.write_csv(
        pdir / f"{stamp}.csv",
        ["response", "horizon", "source", "mu", "sigma", "lo95", "hi95"],
        rows,
    )
    artifacts.write_manifest(out)
    _log(f"predict[{issue_time}]: {len(rows)} rows -> {pdir}")


# ---------------------------------------------------------------- report

def run_report(config: RunConfig, families: tuple[str, ...] | None = None) -> None:
    """Parameter-vs-horizon tables with bootstrap bands for consistent models."""
    out = config.out
    grid = _load_grid(out)
    families = families or tuple(grid["families"])
    fc, ms = _load_period(config, "train")
    for ri, resp in enumerate(config.responses):
        for fi, family in enumerate(families):
            sel = artifacts.read_json(out / "selection" / f"{resp.code}_{family}.json")
            label = sel["consistent"]
            covs = (
                ()
                if label == "(intercept)"
                else tuple(parse_covariate(lbl, config.quantities) for lbl in label.split("+"))
            )
            spec = ModelSpec(family=family, response=resp, mean_covariates=covs)
            rows = []
            for h in grid["horizons"]:
                data = align(fc, ms, resp, h, list(covs))
                bundle = artifacts.read_json(_bundle_path(out, resp.code, family, h))
                model = model_from_dict(bundle["models"][label])
                seed = _cell_seed(config.seed, 1000 + ri, h, fi)
                ci = bootstrap_model_ci(
                    data, spec, config.bootstrap_b, seed, standardize_z=config.standardize
                )
                for name, value in zip(parameter_names(spec), parameter_values(model)):
                    lo, hi = ci[name]
                    rows.append([h, name, value, lo, hi])
            artifacts.write_csv(
                out / "selection" / f"params_{resp.code}_{family}.csv",
                ["horizon", "parameter", "estimate", "lo95", "hi95"],
                rows,
            )
    artifacts.write_manifest(out)
    _log(f"report: parameter tables -> {out / 'selection'}")


# ---------------------------------------------------------------- main

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="path to the run config JSON")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--bootstrap", type=int, help="bootstrap replicate count B")
    p.add_argument("--jobs", type=int, help="worker threads for fitting")
    p.add_argument("--family", choices=["lr", "nhgr", "both"], default="both")
    p.add_argument("--set", action="append", default=[], dest="overrides",
                   metavar="KEY=VALUE", help="override a config entry (dotted path)")


def _families(args) -> tuple[str, ...] | None:
    return None if args.family == "both" else (args.family,)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="metocal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic scenario")
    p.add_argument("--config", required=True, help="scenario config JSON")
    p.add_argument("--out", required=True, help="directory for CSVs and truth.json")
    p.add_argument("--seed", type=int, help="override the scenario seed")
    p.add_argument("--set", action="append", default=[], dest="overrides", metavar="KEY=VALUE")

    for name in ("fit", "select", "report"):
        _add_common(sub.add_parser(name))
    p = sub.add_parser("diagnose", help="verification statistics for one period")
    _add_common(p)
    p.add_argument("--period", default="train", help="'train' or a named test period")
    p = sub.add_parser("predict", help="calibrated forecast for one issue time")
    _add_common(p)
    p.add_argument("--issue-time", required=True, help="e.g. 2022-06-01T00:00Z")

    args = parser.parse_args(argv)
    try:
        if args.command == "simulate":
            run_simulate(args.config, args.out, args.seed, args.overrides)
            return 0
        config = load_run_config(
            args.config, overrides=args.overrides, out=args.out,
            seed=args.seed, bootstrap=args.bootstrap, jobs=args.jobs,
        )
        if args.command == "fit":
            run_fit(config, _families(args))
        elif args.command == "select":
            run_select(config, _families(args))
        elif args.command == "diagnose":
            run_diagnose(config, args.period, _families(args))
        elif args.command == "predict":
            run_predict(config, args.issue_time, _families(args))
        elif args.command == "report":
            run_report(config, _families(args))
        return 0
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return 2
    except DataError as exc:
        _log(f"data error: {exc}")
        return 3
    except (FitError, FloatingPointError) as exc:
        _log(f"numerical failure: {exc}")
        return 4


if __name__ == "__main__":
    sys.exit(main())
