"""Resampling, gap filling, usage segmentation and fixed-length model inputs."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import ConfigError, DataError
from .ingest import ApplianceSeries, series_stats


class FillFlag(IntEnum):
    OBSERVED = 0
    FORWARD_FILLED = 1
    ZERO_FILLED = 2


FLAG_NAMES = {FillFlag.OBSERVED: "observed", FillFlag.FORWARD_FILLED: "forward-filled",
              FillFlag.ZERO_FILLED: "zero-filled"}


@dataclass(frozen=True)
class ResampleConfig:
    r: int = 10
    mean_interval: float = 8.0

    def __post_init__(self):
        if self.r <= 0:
            raise ConfigError(f"resample interval r must be > 0, got {self.r}")
        if self.mean_interval < 0 or not math.isfinite(self.mean_interval):
            raise ConfigError(f"mean_interval must be finite and >= 0, got {self.mean_interval}")

    @classmethod
    def for_series(cls, series: ApplianceSeries, r: int = 10) -> "ResampleConfig":
        return cls(r=r, mean_interval=series_stats(series)["mean_interval_seconds"])


@dataclass(frozen=True)
class SegmentationConfig:
    on_threshold: float = 5.0
    merge_gap_max: int = 600
    max_duration: int = 3200

    def __post_init__(self):
        if self.on_threshold < 0:
            raise ConfigError("on_threshold must be >= 0")
        if self.merge_gap_max < 0:
            raise ConfigError("merge_gap_max must be >= 0")
        if self.max_duration <= 0:
            raise ConfigError("max_duration must be > 0")


@dataclass
class RegularSeries:
    """Equal-interval series; ``filled_mask`` holds one FillFlag per bucket."""

    start_timestamp: int
    r: int
    values: np.ndarray
    filled_mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.filled_mask = np.asarray(self.filled_mask, dtype=np.int8)
        if self.values.shape != self.filled_mask.shape:
            raise ValueError("values and filled_mask must have equal length")

    def __len__(self):
        return len(self.values)

    @property
    def timestamps(self) -> np.ndarray:
        return self.start_timestamp + self.r * np.arange(len(self.values), dtype=np.int64)


@dataclass
class Segment:
    """One device usage: buckets ``[start_index, stop_index)`` of a RegularSeries."""

    start_index: int
    stop_index: int
    start_timestamp: int
    values: np.ndarray
    truncated: bool = False
    continuation: bool = False

    def __len__(self):
        return self.stop_index - self.start_index

    def to_manifest(self) -> dict:
        return {"start": int(self.start_timestamp), "start_index": int(self.start_index),
                "length": int(len(self)), "truncated": bool(self.truncated),
                "continuation": bool(self.continuation)}


@dataclass
class UsageSignal:
    start_timestamp: int
    samples: np.ndarray
    raw_peak_watts: float
    n_valid: int = field(default=0)

    @property
    def length(self) -> int:
        return len(self.samples)


def gap_fill_limit(config: ResampleConfig) -> int:
    """Longest run of empty buckets that may be forward-filled: floor(4 * t_mean / r)."""
    if config.r <= 0:
        raise ConfigError("r must be > 0")
    # guard against 2.9999999 from float division of exact multiples
    return max(0, math.floor(4.0 * config.mean_interval / config.r + 1e-9))


def _runs(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start and stop (exclusive) indices of the True runs of a boolean mask."""
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    edges = np.diff(padded)
    return np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)


def resample(series: ApplianceSeries, config: ResampleConfig) -> RegularSeries:
    r = config.r
    t0 = int(series.timestamps[0])
    idx = (series.timestamps - t0) // r
    n_buckets = int(idx[-1]) + 1
    counts = np.bincount(idx, minlength=n_buckets)
    sums = np.bincount(idx, weights=series.watts, minlength=n_buckets)
    observed = counts > 0
    values = np.zeros(n_buckets)
    values[observed] = sums[observed] / counts[observed]
    mask = np.where(observed, FillFlag.OBSERVED, FillFlag.ZERO_FILLED).astype(np.int8)

    limit = gap_fill_limit(config)
    if limit > 0:
        starts, stops = _runs(~observed)
        for a, b in zip(starts, stops):
            # the first bucket always holds a reading, so a >= 1
            if b - a <= limit:
                values[a:b] = values[a - 1]
                mask[a:b] = FillFlag.FORWARD_FILLED
    return RegularSeries(start_timestamp=t0, r=r, values=values, filled_mask=mask)


def segment_usages(series: RegularSeries, config: SegmentationConfig = SegmentationConfig()) -> list[Segment]:
    """Split a regular series into per-usage segments.

    Above-threshold runs separated by at most ``merge_gap_max`` seconds of
    off time are merged into one usage.  A usage longer than
    ``max_duration`` is cut at that length and flagged ``truncated``; the
    rest of it is emitted as a following segment flagged ``continuation``.
    A segment's duration is the time between its first and last bucket
    timestamps, so a usage of exactly ``max_duration`` seconds that straddles
    one extra bucket boundary is not cut.
    """
    r = series.r
    on = series.values > config.on_threshold
    starts, stops = _runs(on)
    if len(starts) == 0:
        return []

    merged: list[list[int]] = [[int(starts[0]), int(stops[0])]]
    for a, b in zip(starts[1:], stops[1:]):
        if (a - merged[-1][1]) * r <= config.merge_gap_max:
            merged[-1][1] = int(b)
        else:
            merged.append([int(a), int(b)])

    max_buckets = config.max_duration // r + 1
    segments: list[Segment] = []
    for a, b in merged:
        continuation = False
        while a < b:
            stop = b
            truncated = (b - a - 1) * r > config.max_duration
            if truncated:
                stop = a + max_buckets
            segments.append(Segment(a, stop, series.start_timestamp + a * r,
                                    series.values[a:stop].copy(), truncated, continuation))
            a = stop
            while a < b and not on[a]:
                a += 1
            continuation = True
    return segments


def to_usage_signal(segment, L: int = 320, norm_max: float = 1.0, start_timestamp: int = 0) -> UsageSignal:
    """Normalise by ``norm_max``, clamp to [0, 1], right-pad with zeros / truncate to ``L``."""
    if norm_max <= 0 or not math.isfinite(norm_max):
        raise ConfigError(f"norm_max must be > 0, got {norm_max}")
    if isinstance(segment, Segment):
        start_timestamp = segment.start_timestamp
        values = segment.values
    else:
        values = np.asarray(segment, dtype=np.float64)
    if len(values) == 0:
        raise DataError("cannot build a usage signal from an empty segment")
    n = min(len(values), L)
    samples = np.zeros(L)
    samples[:n] = np.clip(values[:n] / norm_max, 0.0, 1.0)
    return UsageSignal(start_timestamp=int(start_timestamp), samples=samples,
                       raw_peak_watts=float(np.max(values)), n_valid=n)


def fit_norm_max(segments) -> float:
    """Global peak watts over a collection of (training) segments."""
    peak = max((float(np.max(s.values if isinstance(s, Segment) else s)) for s in segments), default=0.0)
    if peak <= 0:
        raise DataError("training segments have no positive power; cannot normalise")
    return peak


def preprocess_series(series: ApplianceSeries, r: int = 10,
                      seg_config: SegmentationConfig = SegmentationConfig()) -> tuple[RegularSeries, list[Segment]]:
    regular = resample(series, ResampleConfig.for_series(series, r))
    return regular, segment_usages(regular, seg_config)


# -- intermediate files ----------------------------------------------------

def write_regular_csv(series: RegularSeries, stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["timestamp", "value", "fill_flag"])
    for t, v, f in zip(series.timestamps, series.values, series.filled_mask):
        writer.writerow([int(t), repr(float(v)), FLAG_NAMES[FillFlag(int(f))]])


def read_regular_csv(stream) -> RegularSeries:
    reader = csv.DictReader(stream)
    if reader.fieldnames is None or not {"timestamp", "value", "fill_flag"} <= set(reader.fieldnames):
        raise DataError("regular-series CSV must have columns timestamp,value,fill_flag")
    by_name = {v: k for k, v in FLAG_NAMES.items()}
    ts, vals, flags = [], [], []
    for row in reader:
        ts.append(int(row["timestamp"]))
        vals.append(float(row["value"]))
        flags.append(by_name[row["fill_flag"]])
    if not ts:
        raise DataError("regular-series CSV is empty")
    ts = np.asarray(ts, dtype=np.int64)
    steps = np.unique(np.diff(ts))
    if len(steps) > 1:
        raise DataError("regular-series CSV is not evenly spaced")
    r = int(steps[0]) if len(steps) else 1
    return RegularSeries(int(ts[0]), r, np.asarray(vals), np.asarray(flags))


def segments_manifest(series: RegularSeries, segments: list[Segment], config: SegmentationConfig) -> dict:
    return {
        "start_timestamp": int(series.start_timestamp),
        "r": int(series.r),
        "n_buckets": int(len(series)),
        "segmentation": {"on_threshold": config.on_threshold, "merge_gap_max": config.merge_gap_max,
                         "max_duration": config.max_duration},
        "segments": [s.to_manifest() for s in segments],
    }


def segments_from_manifest(manifest: dict, series: RegularSeries) -> list[Segment]:
    if manifest.get("r") != series.r or manifest.get("start_timestamp") != series.start_timestamp:
        raise DataError("segment manifest does not match the regular series")
    out = []
    for rec in manifest["segments"]:
        a = int(rec["start_index"])
        b = a + int(rec["length"])
        if b > len(series):
            raise DataError(f"segment at index {a} runs past the series end")
        out.append(Segment(a, b, int(rec["start"]), series.values[a:b].copy(),
                           bool(rec["truncated"]), bool(rec.get("continuation", False))))
    return out


def dump_manifest(manifest: dict, stream) -> None:
    json.dump(manifest, stream, indent=2, sort_keys=True)
    stream.write("\n")
