"""Deterministic artifact writing: JSON, CSV, and the content-hash manifest.

Every run artifact must be byte-identical across reruns with the same inputs
and seed, so writers avoid wall-clock fields, sort JSON keys, and rely on
repr-based float formatting (shortest round-trip, value-exact at parse).
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

SCHEMA_VERSION = 1


def write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [",".join(header)]
    lines += [",".join(format_cell(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path) -> Path:
    """Scan the output directory and record every artifact's hash and size."""
    out_dir = Path(out_dir)
    artifacts = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            rel = p.relative_to(out_dir).as_posix()
            artifacts[rel] = {"sha256": sha256_file(p), "bytes": p.stat().st_size}
    manifest = {"schema_version": SCHEMA_VERSION, "artifacts": artifacts}
    path = out_dir / "manifest.json"
    write_json(path, manifest)
    return path
