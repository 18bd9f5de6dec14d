"""REFIT CLEAN CSV ingestion.

REFIT releases ship one CSV per house with a ``Unix`` seconds column, an
``Aggregate`` column, nine ``Appliance<N>`` columns and (in some releases)
a trailing ``Issues`` flag.  Only the time column and one selected appliance
column are read; everything else is ignored.
"""
from __future__ import annotations

import csv
import io
import math
import os
import re
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, NamedTuple

import numpy as np

from .errors import EmptySeriesError, ParseError

TIME_COLUMNS = ("Unix", "unix", "Timestamp", "timestamp", "time_unix")


class RawReading(NamedTuple):
    timestamp: int
    watts: float


@dataclass
class ApplianceSeries:
    """Time-ordered watt readings of a single appliance in one house."""

    house_id: int
    appliance_label: str
    timestamps: np.ndarray
    watts: np.ndarray
    dropped_rows: int = 0
    duplicate_rows: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=np.int64)
        self.watts = np.asarray(self.watts, dtype=np.float64)
        if self.timestamps.shape != self.watts.shape or self.timestamps.ndim != 1:
            raise ValueError("timestamps and watts must be 1-D arrays of equal length")
        if len(self.timestamps) == 0:
            raise EmptySeriesError(f"series {self.appliance_label!r} has no valid readings")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.timestamps)

    @property
    def readings(self) -> list[RawReading]:
        return [RawReading(int(t), float(w)) for t, w in zip(self.timestamps, self.watts)]


def _open_text(source) -> tuple[io.TextIOBase, str | None]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8"), os.fspath(source)
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(bytes(source).decode("utf-8"), newline=""), None
    if isinstance(source, io.TextIOBase):
        return source, None
    return io.TextIOWrapper(source, encoding="utf-8", newline=""), None


def _house_from_name(path: str | None) -> int:
    if path is None:
        return 0
    m = re.search(r"House_?(\d+)", os.path.basename(path), re.IGNORECASE)
    return int(m.group(1)) if m else 0


def _resolve_column(header: list[str], selector) -> int:
    names = [h.strip() for h in header]
    if isinstance(selector, str):
        if selector in names:
            return names.index(selector)
        if selector.strip().lstrip("-").isdigit():
            selector = int(selector)
        else:
            raise ParseError(f"unknown column {selector!r}; header is {names}", column=selector)
    if isinstance(selector, (int, np.integer)) and not isinstance(selector, bool):
        if 0 <= selector < len(names):
            return int(selector)
        raise ParseError(f"column index {selector} out of range for {len(names)} columns",
                         column=str(selector))
    raise ParseError(f"invalid column selector {selector!r}", column=str(selector))


def parse_refit_csv(
    source: str | os.PathLike | BinaryIO | bytes,
    column_selector: str | int = "Appliance1",
    house_id: int | None = None,
    time_column: str | None = None,
) -> ApplianceSeries:
    """Parse one appliance column of a REFIT-format CSV.

    Rows whose watt field is missing, non-numeric, non-finite or negative are
    dropped (and counted in ``dropped_rows``); rows with an unparseable or
    non-positive timestamp are dropped too.  Duplicate timestamps keep their
    last occurrence and are counted in ``duplicate_rows``.  Output is sorted
    ascending by time.
    """
    stream, path = _open_text(source)
    try:
        reader = csv.reader(stream)
        header = next(reader, None)
        if not header or not any(h.strip() for h in header):
            raise ParseError("missing header row", column=None)
        names = [h.strip() for h in header]
        if time_column is None:
            time_idx = next((names.index(c) for c in TIME_COLUMNS if c in names), None)
            if time_idx is None:
                raise ParseError(f"no Unix-time column in header {names}", column="Unix")
        else:
            time_idx = _resolve_column(header, time_column)
        col_idx = _resolve_column(header, column_selector)

        ts: list[int] = []
        ws: list[float] = []
        dropped = 0
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            try:
                t = int(float(row[time_idx]))
                w = float(row[col_idx])
            except (ValueError, IndexError):
                dropped += 1
                continue
            if t <= 0 or not math.isfinite(w) or w < 0:
                dropped += 1
                continue
            ts.append(t)
            ws.append(w)
    finally:
        if path is not None:
            stream.close()

    if not ts:
        raise EmptySeriesError(f"column {names[col_idx]!r} has no valid rows")

    t_arr = np.asarray(ts, dtype=np.int64)
    w_arr = np.asarray(ws, dtype=np.float64)
    # stable sort keeps file order within equal timestamps, so "last" is well defined
    order = np.argsort(t_arr, kind="stable")
    t_arr, w_arr = t_arr[order], w_arr[order]
    keep = np.ones(len(t_arr), dtype=bool)
    keep[:-1] = t_arr[1:] != t_arr[:-1]
    duplicates = int(len(keep) - keep.sum())

    return ApplianceSeries(
        house_id=_house_from_name(path) if house_id is None else house_id,
        appliance_label=names[col_idx],
        timestamps=t_arr[keep],
        watts=w_arr[keep],
        dropped_rows=dropped,
        duplicate_rows=duplicates,
    )


def write_refit_csv(series: ApplianceSeries | Iterable[ApplianceSeries], stream) -> None:
    """Write series as a minimal REFIT-style CSV (``Unix`` plus one column per series).

    Multiple series must share their timestamps.
    """
    if isinstance(series, ApplianceSeries):
        series = [series]
    series = list(series)
    ts = series[0].timestamps
    for s in series[1:]:
        if not np.array_equal(s.timestamps, ts):
            raise ValueError("all series written to one file must share timestamps")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["Unix"] + [s.appliance_label for s in series])
    cols = [s.watts for s in series]
    for i, t in enumerate(ts):
        writer.writerow([int(t)] + [repr(float(c[i])) for c in cols])


def series_stats(series: ApplianceSeries) -> dict:
    """Count, watt range and mean sampling interval (0.0 for a single reading)."""
    ts = series.timestamps
    mean_interval = float(np.mean(np.diff(ts))) if len(ts) > 1 else 0.0
    return {
        "count": int(len(ts)),
        "min_watts": float(series.watts.min()),
        "max_watts": float(series.watts.max()),
        "mean_interval_seconds": mean_interval,
    }
