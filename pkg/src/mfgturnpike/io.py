"""CSV/JSON writers and the binary field dump.

Field dump layout (little endian): int64 dim, int64 nx, int64 nt, float64 T,
then for each stored quantity (nt + 1) * nx**dim float64 values in
row-major order.  Trajectories store m followed by phi; stationary states
use nt = 0, T = 0 and store m followed by w.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

HEADER = np.dtype([("dim", "<i8"), ("nx", "<i8"), ("nt", "<i8"), ("T", "<f8")])


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return _plain(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(path: str | Path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_plain(data), indent=2, sort_keys=True) + "\n")
    return path


def write_csv(path: str | Path, rows: list[dict], columns: list[str] | None = None) -> Path:
    path = Path(path)
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({c: _format(row.get(c, "")) for c in columns})
    return path


def _format(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (tuple, list)):
        return " ".join(str(int(x)) for x in v)
    return v


def read_csv(path: str | Path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def write_field_dump(path: str | Path, dim: int, nx: int, nt: int, T: float, *fields: np.ndarray) -> Path:
    path = Path(path)
    header = np.array([(dim, nx, nt, T)], dtype=HEADER)
    expected = (nt + 1) * nx**dim
    with path.open("wb") as fh:
        fh.write(header.tobytes())
        for f in fields:
            arr = np.ascontiguousarray(f, dtype="<f8")
            if arr.size != expected:
                raise ValueError(f"field has {arr.size} values, expected {expected}")
            fh.write(arr.tobytes())
    return path


def read_field_dump(path: str | Path) -> tuple[dict, list[np.ndarray]]:
    raw = Path(path).read_bytes()
    header = np.frombuffer(raw[:HEADER.itemsize], dtype=HEADER)[0]
    dim, nx, nt, T = int(header["dim"]), int(header["nx"]), int(header["nt"]), float(header["T"])
    data = np.frombuffer(raw[HEADER.itemsize:], dtype="<f8")
    shape = (nt + 1,) + (nx,) * dim
    per = int(np.prod(shape))
    if data.size % per:
        raise ValueError("field dump is truncated")
    fields = [data[i * per:(i + 1) * per].reshape(shape).copy() for i in range(data.size // per)]
    return {"dim": dim, "nx": nx, "nt": nt, "T": T}, fields
