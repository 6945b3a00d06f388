"""One render function per figure family.

Every function takes the artifact path plus an output path and raises
ArtifactError on schema mismatch, missing series, or an empty horizon list.
Rendering is deterministic: fixed figure geometry, no timestamps in the
output metadata.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "metocal-plotviz"  # deterministic element ids
import matplotlib.pyplot as plt
import numpy as np

from metocal_plotviz import EXPECTED_SCHEMA_VERSION, SOURCE_COLORS


class ArtifactError(Exception):
    """Unusable input artifact (wrong schema, missing series, empty data)."""


def _load_json(path: Path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ArtifactError(f"artifact not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"artifact is not valid JSON: {path}: {exc}") from exc
    version = doc.get("schema_version")
    if version != EXPECTED_SCHEMA_VERSION:
        raise ArtifactError(
            f"{path}: schema_version {version!r}, expected {EXPECTED_SCHEMA_VERSION}"
        )
    return doc


def _load_csv(path: Path) -> list[dict]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))
    except FileNotFoundError as exc:
        raise ArtifactError(f"artifact not found: {path}") from exc


def _save(fig, out_path: Path) -> None:
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    kind = out_path.suffix.lstrip(".").lower() or "png"
    if kind not in ("png", "svg"):
        raise ArtifactError(f"unsupported output format {kind!r} (png or svg)")
    metadata = {"Date": None} if kind == "svg" else {}
    fig.savefig(out_path, format=kind, dpi=120, metadata=metadata)
    plt.close(fig)


def _by_response(entries: list[dict]) -> dict[str, list[dict]]:
    out: dict[str, list[dict]] = {}
    for e in entries:
        out.setdefault(e["response"], []).append(e)
    return out


def render_error_panels(summary_json: Path, out_path: Path) -> None:
    """Bias (with bootstrap band), error sd, and KS p-value vs horizon."""
    doc = _load_json(summary_json)
    groups = _by_response(doc["entries"])
    if not groups:
        raise ArtifactError(f"{summary_json}: no diagnostic entries")
    fig, axes = plt.subplots(
        len(groups), 3, figsize=(12, 3.2 * len(groups)), squeeze=False
    )
    for row, (resp, entries) in enumerate(sorted(groups.items())):
        sources = sorted({e["source"] for e in entries})
        ax_bias, ax_sd, ax_ks = axes[row]
        for source in sources:
            sub = sorted((e for e in entries if e["source"] == source), key=lambda e: e["horizon"])
            if not sub:
                raise ArtifactError(f"{summary_json}: missing series {resp}/{source}")
            h = [e["horizon"] for e in sub]
            color = SOURCE_COLORS.get(source, "k")
            bias = [e["bias"] for e in sub]
            lo = [e["bias"] - e["bias_lo"] for e in sub]
            hi = [e["bias_hi"] - e["bias"] for e in sub]
            ax_bias.errorbar(h, bias, yerr=[lo, hi], fmt="o-", ms=3, lw=1, color=color, label=source)
            ax_sd.plot(h, [e["err_sd"] for e in sub], "o-", ms=3, lw=1, color=color, label=source)
            ks = [(e["horizon"], e["ks_p"]) for e in sub if e["ks_p"] is not None]
            if ks:
                ax_ks.plot(*zip(*ks), "o-", ms=3, lw=1, color=color, label=source)
        ax_bias.axhline(0.0, color="k", lw=0.5)
        ax_bias.set_ylabel(f"{resp} bias")
        ax_sd.set_ylabel("error sd")
        ax_ks.axhline(0.05, color="k", lw=0.5, ls="--")
        ax_ks.set_ylabel("KS p-value")
        ax_ks.set_yscale("log")
        for ax in axes[row]:
            ax.set_xlabel("horizon [h]")
            ax.legend(fontsize=7)
    fig.suptitle(f"Forecast error diagnostics ({doc['period']})")
    fig.tight_layout()
    _save(fig, out_path)


def render_aic_curves(selection_json: Path, out_path: Path) -> None:
    """AIC vs horizon: deterministic-only, consistent, and optimal models."""
    doc = _load_json(selection_json)
    horizons = doc["horizons"]
    if not horizons:
        raise ArtifactError(f"{selection_json}: empty horizon list")
    det_label = f"det_{doc['response']}"
    consistent = doc["consistent"]
    fig, ax = plt.subplots(figsize=(6, 4))
    series = {
        ("deterministic only", "red", det_label): [],
        ("consistent", "c", consistent): [],
        ("optimal", "orange", None): [],
    }
    for h in horizons:
        table = doc["aic_table"][str(h)]
        optimal_label = doc["optimal"][str(h)]
        for (name, _, label), values in series.items():
            key = label or optimal_label
            if key not in table:
                raise ArtifactError(f"{selection_json}: no AIC for {key!r} at horizon {h}")
            values.append(table[key])
    for (name, color, _), values in series.items():
        ax.plot(horizons, values, "o-", ms=3, lw=1, color=color, label=name)
    ax.set_xlabel("horizon [h]")
    ax.set_ylabel("AIC")
    ax.set_title(f"{doc['response']} / {doc['family']}: AIC by calibration model")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, out_path)


def render_parameter_bands(params_csv: Path, out_path: Path) -> None:
    """Per-horizon parameter estimates with central 95% bootstrap bands."""
    rows = _load_csv(params_csv)
    if not rows:
        raise ArtifactError(f"{params_csv}: empty parameter table")
    params = sorted({r["parameter"] for r in rows})
    fig, ax = plt.subplots(figsize=(7, 4.5))
    cmap = plt.get_cmap("tab10")
    for i, name in enumerate(params):
        sub = sorted((r for r in rows if r["parameter"] == name), key=lambda r: int(r["horizon"]))
        h = [int(r["horizon"]) for r in sub]
        est = [float(r["estimate"]) for r in sub]
        lo = [float(r["estimate"]) - float(r["lo95"]) for r in sub]
        hi = [float(r["hi95"]) - float(r["estimate"]) for r in sub]
        ax.errorbar(h, est, yerr=[lo, hi], fmt="o-", ms=3, lw=1, color=cmap(i % 10), label=name)
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xlabel("horizon [h]")
    ax.set_ylabel("estimate")
    ax.set_title(Path(params_csv).stem.replace("params_", "parameters: "))
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    _save(fig, out_path)


def render_barcode(barcode_csv: Path, out_path: Path) -> None:
    """Monochrome inclusion matrix: covariates x horizons."""
    rows = _load_csv(barcode_csv)
    if not rows:
        raise ArtifactError(f"{barcode_csv}: empty barcode")
    horizons = [c for c in rows[0] if c != "covariate"]
    if not horizons:
        raise ArtifactError(f"{barcode_csv}: empty horizon list")
    labels = [r["covariate"] for r in rows]
    matrix = np.array([[int(r[h]) for h in horizons] for r in rows])
    fig, ax = plt.subplots(figsize=(max(4.0, 0.28 * len(horizons)), 0.5 * len(labels) + 1.2))
    ax.imshow(1 - matrix, cmap="gray", aspect="auto", vmin=0, vmax=1)
    ax.set_yticks(range(len(labels)), labels, fontsize=8)
    ax.set_xticks(range(len(horizons)), horizons, fontsize=7, rotation=90)
    ax.set_xlabel("horizon [h]")
    ax.set_title(Path(barcode_csv).stem.replace("_barcode", " optimal-model covariates"))
    fig.tight_layout()
    _save(fig, out_path)


def render_crps_curves(summary_csv: Path, out_path: Path) -> None:
    """Mean CRPS vs horizon per source."""
    rows = _load_csv(summary_csv)
    if not rows:
        raise ArtifactError(f"{summary_csv}: empty diagnostics table")
    responses = sorted({r["response"] for r in rows})
    fig, axes = plt.subplots(1, len(responses), figsize=(4 * len(responses), 3.4), squeeze=False)
    for ax, resp in zip(axes[0], responses):
        sub_resp = [r for r in rows if r["response"] == resp]
        for source in sorted({r["source"] for r in sub_resp}):
            sub = sorted(
                (r for r in sub_resp if r["source"] == source), key=lambda r: int(r["horizon"])
            )
            ax.plot(
                [int(r["horizon"]) for r in sub],
                [float(r["mean_crps"]) for r in sub],
                "o-", ms=3, lw=1, color=SOURCE_COLORS.get(source, "k"), label=source,
            )
        ax.set_xlabel("horizon [h]")
        ax.set_ylabel("mean CRPS")
        ax.set_title(resp)
        ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, out_path)


def render_rank_histograms(rank_json: Path, out_path: Path) -> None:
    """Pooled PIT histograms per response and source, uniform reference line."""
    doc = _load_json(rank_json)
    histograms = doc.get("histograms", {})
    if not histograms:
        raise ArtifactError(f"{rank_json}: no histograms")
    responses = sorted(histograms)
    bin_count = doc["bin_count"]
    fig, axes = plt.subplots(1, len(responses), figsize=(4 * len(responses), 3.2), squeeze=False)
    centers = (np.arange(bin_count) + 0.5) / bin_count
    width = 1.0 / bin_count
    for ax, resp in zip(axes[0], responses):
        sources = sorted(histograms[resp])
        for k, source in enumerate(sources):
            h = histograms[resp][source]
            density = np.asarray(h["counts"], dtype=float) * bin_count / max(h["n"], 1)
            offset = (k - (len(sources) - 1) / 2) * width / (len(sources) + 1)
            ax.bar(centers + offset, density, width=width / (len(sources) + 0.5),
                   color=SOURCE_COLORS.get(source, "k"), alpha=0.8, label=source)
        ax.axhline(1.0, color="k", lw=1)
        ax.set_xlabel("PIT")
        ax.set_ylabel("relative density")
        ax.set_title(resp)
        ax.legend(fontsize=8)
    fig.suptitle(f"Rank histograms pooled over horizons ({doc['period']})")
    fig.tight_layout()
    _save(fig, out_path)


RENDERERS = {
    "error-panels": render_error_panels,
    "aic-curves": render_aic_curves,
    "parameter-bands": render_parameter_bands,
    "barcode": render_barcode,
    "crps-curves": render_crps_curves,
    "rank-histograms": render_rank_histograms,
}
