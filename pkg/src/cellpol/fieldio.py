"""Grid field dumps: raw little-endian float64 or CSV, each with a JSON header.

``name.json`` holds the header; the samples go to ``name.bin`` (C order,
shape ``header["shape"]``) or ``name.csv`` (one grid row per line).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .domain import DomainSpec

FORMAT_VERSION = 1


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_field(path, values: np.ndarray, domain: DomainSpec, meta: Optional[dict] = None,
                fmt: str = "bin") -> Tuple[Path, Path]:
    """Write ``values`` next to a header; returns ``(header_path, data_path)``."""
    path = Path(path)
    values = np.asarray(values, dtype=float)
    if values.shape != tuple(domain.shape):
        raise ValueError("field does not match the grid")
    if fmt not in ("bin", "csv"):
        raise ValueError("fmt must be 'bin' or 'csv'")
    data_path = path.with_suffix("." + fmt)
    header = {"version": FORMAT_VERSION, "format": fmt, "dtype": "<f8", "order": "C",
              "data": data_path.name, **domain.header()}
    header.update(meta or {})
    head_path = path.with_suffix(".json")
    head_path.write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    if fmt == "bin":
        data_path.write_bytes(values.astype("<f8").tobytes(order="C"))
    else:
        with data_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            for row in values:
                w.writerow([_fmt(v) for v in row])
    return head_path, data_path


def read_field(path) -> Tuple[np.ndarray, dict]:
    """Inverse of :func:`write_field`; ``path`` may name the header or the data file."""
    head_path = Path(path).with_suffix(".json")
    header = json.loads(head_path.read_text())
    shape = tuple(header["shape"])
    data_path = head_path.with_name(header["data"])
    if header["format"] == "bin":
        values = np.frombuffer(data_path.read_bytes(), dtype="<f8").reshape(shape)
    else:
        with data_path.open(newline="") as fh:
            values = np.array([[float(v) for v in row] for row in csv.reader(fh)])
        if values.shape != shape:
            raise ValueError("CSV dump does not match its header shape")
    return values.copy(), header


def domain_from_header(header: dict) -> DomainSpec:
    return DomainSpec(header["kind"], tuple(header["lower"]), tuple(header["upper"]),
                      tuple(header["shape"]))
