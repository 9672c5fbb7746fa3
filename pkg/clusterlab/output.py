# clusterlab/output.py
"""
Result files.

- Point files: CSV with header `x1,...,xk,mark`, LF line endings, floats in
  shortest round-trip form. `mark` is an integer label (replica index for
  sampled configurations, owning cluster for marked ones).
- Result records: JSON lines, keys sorted, each carrying config_hash and seed.
- Time series: CSV `t,mean,se`.

For identical (config, seed, threads) every file is byte-identical.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import orjson
from numpy.typing import NDArray

_JSON_OPTS = orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY | orjson.OPT_NON_STR_KEYS


def _fmt(value: float) -> str:
    return repr(float(value))


def write_points_csv(path: str | Path, points: NDArray[np.float64], marks: Sequence[int] | None = None) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise ValueError("points must be a 2-D array, one row per point")
    n, k = pts.shape
    labels = np.zeros(n, dtype=int) if marks is None else np.asarray(marks, dtype=int)
    if labels.shape[0] != n:
        raise ValueError(f"{labels.shape[0]} marks for {n} points")
    with p.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"x{i + 1}" for i in range(k)] + ["mark"])
        for row, mark in zip(pts, labels):
            writer.writerow([_fmt(v) for v in row] + [int(mark)])
    return p


def read_points_csv(path: str | Path) -> tuple[NDArray[np.float64], NDArray[np.int64]]:
    """Inverse of write_points_csv; a file without a `mark` column gets zero marks."""
    p = Path(path)
    with p.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{p}: empty point file") from None
        has_mark = bool(header) and header[-1].strip() == "mark"
        k = len(header) - (1 if has_mark else 0)
        if k < 1 or any(not h.strip().startswith("x") for h in header[:k]):
            raise ValueError(f"{p}: header must be x1,...,xk[,mark]")
        rows: list[list[float]] = []
        marks: list[int] = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise ValueError(f"{p}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            try:
                rows.append([float(v) for v in rec[:k]])
                marks.append(int(rec[k]) if has_mark else 0)
            except ValueError as exc:
                raise ValueError(f"{p}:{lineno}: {exc}") from exc
    points = np.asarray(rows, dtype=float).reshape(len(rows), k)
    return points, np.asarray(marks, dtype=np.int64)


def write_timeseries_csv(path: str | Path, times: Iterable[float], mean: Iterable[float], se: Iterable[float]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "mean", "se"])
        for t, m, s in zip(times, mean, se, strict=True):
            writer.writerow([_fmt(t), _fmt(m), _fmt(s)])
    return p


class ResultWriter:
    """Appends one JSON object per line to `path`, stamping config_hash and seed."""

    def __init__(self, path: str | Path, config_hash: str, seed: int):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.config_hash = config_hash
        self.seed = seed
        # truncate: a run owns its result file
        self.path.write_bytes(b"")

    def write(self, record: dict[str, Any]) -> dict[str, Any]:
        stamped = {**record, "config_hash": self.config_hash, "seed": self.seed}
        with self.path.open("a", encoding="utf-8", newline="") as fh:
            fh.write(dumps_record(stamped) + "\n")
        return stamped


def read_results(path: str | Path) -> list[dict[str, Any]]:
    return [orjson.loads(line) for line in Path(path).read_bytes().splitlines() if line.strip()]


def dumps_record(record: dict[str, Any]) -> str:
    return orjson.dumps(record, option=_JSON_OPTS).decode()
