"""CSV tables and JSONL trajectories, both led by a schema-version line."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return int(v)
    return v


def write_csv(path, rows: list[dict], columns: list | None = None) -> Path:
    """Write ``rows`` under a ``# schema_version=N`` line; floats use ``repr`` for exact round-trips."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if columns is None:
        columns = []
        for r in rows:
            columns.extend(k for k in r if k not in columns)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c, "")) for c in columns])
    return path


def read_csv(path) -> tuple[int, list[dict]]:
    """Returns (schema version, rows as string dicts)."""
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("# schema_version="):
            raise ValueError(f"{path}: missing schema-version header")
        version = int(first.split("=", 1)[1])
        return version, list(csv.DictReader(fh))


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def write_jsonl(path, records, kind: str = "trajectory") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write(json.dumps({"schema_version": SCHEMA_VERSION, "kind": kind}) + "\n")
        for rec in records:
            fh.write(json.dumps(rec, default=_jsonable, sort_keys=True) + "\n")
    return path


def read_jsonl(path) -> tuple[dict, list[dict]]:
    with open(path) as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    if not lines or "schema_version" not in lines[0]:
        raise ValueError(f"{path}: missing schema-version header")
    return lines[0], lines[1:]
