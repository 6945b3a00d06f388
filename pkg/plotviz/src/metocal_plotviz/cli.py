"""Figure CLI: `plot <figure-kind> --in <artifact> --out <png|svg>`.

`plot render-all --run <dir> --out-dir <dir>` walks a metocal run's
manifest and renders every figure family that has matching artifacts.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from metocal_plotviz import FIGURE_KINDS
from metocal_plotviz.figures import RENDERERS, ArtifactError


def _render_all(run_dir: Path, out_dir: Path) -> list[Path]:
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise ArtifactError(f"no manifest at {manifest_path}")
    artifacts = json.loads(manifest_path.read_text(encoding="utf-8"))["artifacts"]
    rendered = []

    def emit(kind: str, rel: str, stem: str) -> None:
        out = out_dir / f"{stem}.png"
        RENDERERS[kind](run_dir / rel, out)
        rendered.append(out)

    for rel in sorted(artifacts):
        parts = rel.split("/")
        name = parts[-1]
        if parts[0] == "diagnostics" and name == "summary.json":
            emit("error-panels", rel, f"error_panels_{parts[1]}")
        elif parts[0] == "diagnostics" and name == "summary.csv":
            emit("crps-curves", rel, f"crps_{parts[1]}")
        elif parts[0] == "diagnostics" and name == "rank_histograms.json":
            emit("rank-histograms", rel, f"rank_histograms_{parts[1]}")
        elif parts[0] == "selection" and name.endswith("_barcode.csv"):
            emit("barcode", rel, f"barcode_{name[:-12]}")
        elif parts[0] == "selection" and name.startswith("params_"):
            emit("parameter-bands", rel, name[:-4])
        elif (
            parts[0] == "selection"
            and name.endswith(".json")
            and name != "consistent.json"
        ):
            emit("aic-curves", rel, f"aic_{name[:-5]}")
    if not rendered:
        raise ArtifactError(f"no renderable artifacts found in {run_dir}")
    return rendered


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="plot", description=__doc__)
    sub = parser.add_subparsers(dest="kind", required=True)
    for kind in FIGURE_KINDS:
        p = sub.add_parser(kind, help=f"render a {kind} figure")
        p.add_argument("--in", dest="artifact", required=True, help="input artifact path")
        p.add_argument("--out", required=True, help="output image (.png or .svg)")
    p = sub.add_parser("render-all", help="render every figure a run's manifest supports")
    p.add_argument("--run", required=True, help="metocal output directory (holds manifest.json)")
    p.add_argument("--out-dir", required=True, help="directory for rendered figures")

    args = parser.parse_args(argv)
    try:
        if args.kind == "render-all":
            rendered = _render_all(Path(args.run), Path(args.out_dir))
            print(f"rendered {len(rendered)} figures -> {args.out_dir}", file=sys.stderr)
        else:
            RENDERERS[args.kind](Path(args.artifact), Path(args.out))
        return 0
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
