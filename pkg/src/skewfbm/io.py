"""Delimited output and run manifests.

Every study writes plain CSV (locale-independent, full round-trip float
precision via repr) next to a JSON manifest that echoes the complete
configuration.  A manifest is sufficient to regenerate its tables
bit-for-bit in single-worker mode; `reproduce` does exactly that and
byte-compares.
"""

from __future__ import annotations

import csv
import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path

MANIFEST_SCHEMA = "skewfbm.manifest/1"


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_table(path: Path, header: list[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def sha256_of(path: Path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def write_manifest(
    path: Path,
    *,
    study: str,
    params: dict,
    seed: int,
    n_paths: int,
    workers: int,
    outputs: list[Path],
    extra: dict | None = None,
) -> dict:
    from . import __version__

    path = Path(path)
    doc = {
        "schema": MANIFEST_SCHEMA,
        "study": study,
        "params": params,
        "seed": seed,
        "n_paths": n_paths,
        "workers": workers,
        "code_version": __version__,
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "outputs": [
            {"path": str(Path(p).name), "sha256": sha256_of(p)} for p in outputs
        ],
    }
    if extra:
        doc["extra"] = extra
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return doc


def read_manifest(path: Path) -> dict:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema") != MANIFEST_SCHEMA:
        raise ValueError(f"unknown manifest schema in {path}")
    return doc
