"""CSV and JSON artifacts.

Outputs are deterministic: floats are written with repr, JSON keys sorted,
and no timestamps are embedded. Every document carries the tool version and
the experiment's config hash.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from lib import __version__
from lib.engine import EchoTrain
from lib.errors import AnalysisError

TRAIN_COLUMNS = ["time_s", "re", "im", "segment_index"]


def jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, complex):
        return {"re": value.real, "im": value.imag}
    return value


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_json(path: Path, data: dict, config_hash: str | None = None) -> Path:
    """Write data with version and config_hash stamped in."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {"version": __version__, "config_hash": config_hash, **jsonable(data)}
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")
    return path


def write_rows_csv(path: Path, rows: list[dict], columns: list[str], config_hash: str | None = None) -> Path:
    """Table rows as CSV, preceded by a '#' comment line with version and config hash."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# version={__version__} config_hash={config_hash or ''}\n")
        writer = csv.DictWriter(f, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({column: _cell(row.get(column)) for column in columns})
    return path


def write_train_csv(path: Path, train: EchoTrain, config_hash: str | None = None) -> Path:
    rows = [
        {"time_s": t, "re": v.real, "im": v.imag, "segment_index": int(k)}
        for t, v, k in zip(train.times, train.values, train.segment_index)
    ]
    return write_rows_csv(path, rows, TRAIN_COLUMNS, config_hash)


def read_train_csv(path: Path) -> EchoTrain:
    """Load a train written by write_train_csv.

    Raises:
        AnalysisError: If the file lacks the expected columns.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as f:
        lines = [line for line in f if not line.startswith("#")]
    reader = csv.DictReader(lines)
    if reader.fieldnames is None or any(c not in reader.fieldnames for c in TRAIN_COLUMNS):
        raise AnalysisError(f"{path} is not an echo-train CSV (need columns {TRAIN_COLUMNS})")
    records = list(reader)
    return EchoTrain(
        times=np.array([float(r["time_s"]) for r in records]),
        values=np.array([complex(float(r["re"]), float(r["im"])) for r in records]),
        segment_index=np.array([int(r["segment_index"]) for r in records], dtype=int),
        provenance={"source": str(path)},
    )


def read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text())
