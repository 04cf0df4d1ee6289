"""Deterministic CSV/JSON output with provenance headers."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from datetime import datetime, timezone
from pathlib import Path

import numpy as np


def provenance(producer: str, config_hash: str, seed: int) -> str:
    return f"producer={producer} config_hash={config_hash} seed={seed}"


def to_jsonable(obj):
    """Plain-JSON view of reports: numpy scalars/arrays, tuples, non-finite floats."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def write_json(path, producer: str, config_hash: str, seed: int, payload: dict):
    body = {"producer": producer, "config_hash": config_hash, "seed": seed, **to_jsonable(payload)}
    Path(path).write_text(json.dumps(body, sort_keys=True, indent=2) + "\n")


def write_table(path, header_comment: str, columns: list, rows):
    with open(path, "w", newline="") as fh:
        fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_manifest(out_dir, command: str, config_hash: str, seed: int, exit_code: int):
    """``manifest.json`` lists file digests; it holds the only timestamp of a run."""
    out = Path(out_dir)
    files = {}
    for p in sorted(out.iterdir()):
        if p.name != "manifest.json" and p.is_file():
            files[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    body = {
        "producer": "cli.run",
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
        "exit_code": exit_code,
        "files": files,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    (out / "manifest.json").write_text(json.dumps(body, sort_keys=True, indent=2) + "\n")
