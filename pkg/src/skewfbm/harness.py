"""Reproducible Monte Carlo driver.

One substream per path index (counter-based Philox keyed by
master_seed * 2**64 + path_index), so the sampled path set is a pure
function of (seed, N) and never depends on how indices are chunked or
how many workers run.  Chunk boundaries are fixed by a global chunk
size; workers pick up chunks, and the reduction always walks chunks in
index order with compensated summation.  Single-worker runs are
therefore bit-reproducible and multi-worker runs agree with them to
aggregation-order rounding at worst.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable

import numpy as np

from .io import write_manifest, write_table

__all__ = ["map_reduce_paths", "run_study", "reproduce", "STUDIES", "register_study"]

CHUNK = 2048

_seen_seeds: dict[int, str] = {}

#: study name -> fn(params: dict, N: int, seed: int, workers: int) -> dict[table_name, (header, rows)]
STUDIES: dict[str, Callable] = {}


def register_study(name: str):
    def deco(fn):
        STUDIES[name] = fn
        return fn

    return deco


def map_reduce_paths(
    chunk_fn: Callable[[np.ndarray], object],
    N: int,
    workers: int = 1,
    reducer: Callable = None,
):
    """Apply chunk_fn to fixed chunks of path indices; reduce in order.

    chunk_fn receives an index array and returns any partial result.
    reducer folds the ordered list of partials (default: concatenate
    along axis 0).  The chunk layout is independent of `workers`.
    """
    if N <= 0:
        raise ValueError("empty study: N must be positive")
    chunks = [np.arange(a, min(a + CHUNK, N)) for a in range(0, N, CHUNK)]
    if workers <= 1:
        partials = [chunk_fn(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(chunk_fn, chunks))
    if reducer is None:
        return np.concatenate([np.atleast_1d(np.asarray(p)) for p in partials], axis=0)
    return reducer(partials)


def fsum_partials(partials) -> float:
    return math.fsum(float(p) for p in partials)


def run_study(
    study: str,
    params: dict,
    N: int,
    seed: int,
    workers: int = 1,
    out_dir: Path | None = None,
    basename: str | None = None,
):
    """Run a registered study; optionally write its tables and a manifest.

    Returns (tables, manifest_or_None).  Tables map name -> (header, rows).
    """
    if study not in STUDIES:
        raise KeyError(f"unknown study {study!r}; known: {sorted(STUDIES)}")
    if N <= 0:
        raise ValueError("empty study: N must be positive")
    prior = _seen_seeds.get(seed)
    if prior is not None and prior != study:
        warnings.warn(
            f"seed {seed} already used by study {prior!r}; "
            "reusing it couples the two sample sets"
        )
    _seen_seeds[seed] = study
    tables = STUDIES[study](params, N, seed, workers)
    manifest = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        base = basename or study
        paths = []
        for tname, (header, rows) in tables.items():
            p = out_dir / f"{base}_{tname}.csv"
            write_table(p, header, rows)
            paths.append(p)
        manifest = write_manifest(
            out_dir / f"{base}_manifest.json",
            study=study,
            params=params,
            seed=seed,
            n_paths=N,
            workers=workers,
            outputs=paths,
        )
    return tables, manifest


def reproduce(manifest_path: Path, scratch_dir: Path) -> bool:
    """Re-run the study a manifest describes (single worker) and byte-compare."""
    from .io import read_manifest, sha256_of

    doc = read_manifest(manifest_path)
    base = Path(manifest_path).stem.removesuffix("_manifest")
    run_study(
        doc["study"],
        doc["params"],
        doc["n_paths"],
        doc["seed"],
        workers=1,
        out_dir=scratch_dir,
        basename=base,
    )
    for item in doc["outputs"]:
        if sha256_of(Path(scratch_dir) / item["path"]) != item["sha256"]:
            return False
    return True
