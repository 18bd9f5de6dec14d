"""Chronological splits and MAE / MAPE metrics in the layout of the published tables."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError

DEFAULT_EPSILON_FLOOR = 1e-6
STANDARD_RATIOS = ("9:1", "8:2", "7:3")

# Published reference numbers (normalised units), used only for side-by-side reports.
REFERENCE_RESULTS = {
    ("dishwasher", "cnn", "9:1"): (0.1781, 22.55),
    ("dishwasher", "cnn", "8:2"): (0.1570, 20.07),
    ("dishwasher", "cnn", "7:3"): (0.1702, 21.99),
    ("dishwasher", "tcn", "9:1"): (0.1527, 21.39),
    ("dishwasher", "tcn", "8:2"): (0.1371, 17.52),
    ("dishwasher", "tcn", "7:3"): (0.1412, 19.88),
    ("fridge_freezer", "cnn", "9:1"): (0.1678, 21.15),
    ("fridge_freezer", "cnn", "8:2"): (0.1486, 19.17),
    ("fridge_freezer", "cnn", "7:3"): (0.1649, 20.29),
    ("fridge_freezer", "tcn", "9:1"): (0.1422, 18.21),
    ("fridge_freezer", "tcn", "8:2"): (0.1264, 16.33),
    ("fridge_freezer", "tcn", "7:3"): (0.1353, 17.70),
}

MODEL_NAMES = {"cnn": "CNN1D-AE", "tcn": "TCN-AE"}


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float
    label: str = "custom"

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ConfigError(f"train_fraction must be in (0, 1), got {self.train_fraction}")

    @classmethod
    def parse(cls, value) -> "SplitSpec":
        """Accept a SplitSpec, a ratio string like ``"8:2"`` or a fraction."""
        if isinstance(value, SplitSpec):
            return value
        if isinstance(value, str) and ":" in value:
            a, b = (float(x) for x in value.split(":"))
            if a <= 0 or b <= 0:
                raise ConfigError(f"invalid division ratio {value!r}")
            return cls(a / (a + b), value)
        try:
            f = float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"invalid split {value!r}") from None
        return cls(f, f"{f:g}")


def split(signals: Sequence, spec: SplitSpec | str | float) -> tuple[list, list]:
    """First floor(f * N) items train, the rest test; order is preserved."""
    spec = SplitSpec.parse(spec)
    items = list(signals)
    if len(items) < 2:
        raise DataError(f"need at least 2 signals to split, got {len(items)}")
    # tolerance keeps 0.8 * 10 from flooring to 7
    n_train = math.floor(spec.train_fraction * len(items) + 1e-9)
    if n_train == 0 or n_train == len(items):
        raise DataError(f"split {spec.label} of {len(items)} signals leaves an empty side")
    return items[:n_train], items[n_train:]


def mae(pred, actual) -> float:
    p, a = np.asarray(pred, dtype=np.float64), np.asarray(actual, dtype=np.float64)
    if p.shape != a.shape or p.size == 0:
        raise DataError("mae needs equal-length, non-empty inputs")
    return float(np.mean(np.abs(p - a)))


def mape_with_exclusions(pred, actual, epsilon_floor: float = DEFAULT_EPSILON_FLOOR) -> tuple[float, int]:
    """MAPE in percent over timesteps with |actual| > floor, plus the number excluded."""
    p, a = np.asarray(pred, dtype=np.float64), np.asarray(actual, dtype=np.float64)
    if p.shape != a.shape:
        raise DataError("mape needs equal-length inputs")
    keep = np.abs(a) > epsilon_floor
    if not keep.any():
        raise DataError("mape undefined: every actual value is at or below the floor")
    value = 100.0 * float(np.mean(np.abs(a[keep] - p[keep]) / np.abs(a[keep])))
    return value, int(keep.size - keep.sum())


def mape(pred, actual, epsilon_floor: float = DEFAULT_EPSILON_FLOOR) -> float:
    return mape_with_exclusions(pred, actual, epsilon_floor)[0]


@dataclass
class MetricsRow:
    model_kind: str
    split_label: str
    mae: float
    mape: float
    excluded_fraction: float = 0.0
    n_signals: int = 0

    @property
    def model_name(self) -> str:
        return MODEL_NAMES.get(self.model_kind, self.model_kind)


def evaluate(model, test_signals: Sequence, split_label: str = "",
             epsilon_floor: float = DEFAULT_EPSILON_FLOOR) -> MetricsRow:
    """Per-signal MAE/MAPE on normalised reconstructions, averaged across signals.

    Only the valid (unpadded) part of each signal is scored.  Signals whose
    every sample lies at or below ``epsilon_floor`` are left out of the MAPE
    average but still count toward MAE.
    """
    if not test_signals:
        raise DataError("no test signals to evaluate")
    X = np.stack([s.samples for s in test_signals])
    recon = model.reconstruct(X)
    maes, mapes = [], []
    excluded = total = 0
    for s, r in zip(test_signals, recon):
        n = s.n_valid or len(s.samples)
        actual, pred = s.samples[:n], r[:n]
        maes.append(mae(pred, actual))
        total += n
        try:
            m, ex = mape_with_exclusions(pred, actual, epsilon_floor)
        except DataError:
            excluded += n
            continue
        mapes.append(m)
        excluded += ex
    if not mapes:
        raise DataError("mape undefined: no test signal has values above the floor")
    return MetricsRow(model_kind=getattr(model, "kind", "model"), split_label=split_label,
                      mae=float(np.mean(maes)), mape=float(np.mean(mapes)),
                      excluded_fraction=excluded / total, n_signals=len(test_signals))


def run_protocol(signals: Sequence, kinds=("cnn", "tcn"), ratios=STANDARD_RATIOS, run_cfg=None,
                 model_configs: dict | None = None, norm_max_from_train: bool = True, L: int = 320) -> list[MetricsRow]:
    """Train and evaluate every (model, ratio) pair on raw segments or prepared signals.

    ``signals`` may be preprocess.Segment objects, in which case the
    normalisation constant is fitted on each training split.
    """
    from .models import RunConfig, train
    from .preprocess import Segment, fit_norm_max, to_usage_signal

    run_cfg = run_cfg or RunConfig()
    rows = []
    for ratio in ratios:
        spec = SplitSpec.parse(ratio)
        if signals and isinstance(signals[0], Segment):
            train_segs, _ = split(signals, spec)
            norm = fit_norm_max(train_segs) if norm_max_from_train else fit_norm_max(signals)
            prepared = [to_usage_signal(s, L, norm) for s in signals]
        else:
            prepared = list(signals)
        _, test_set = split(prepared, spec)
        for kind in kinds:
            cfg = (model_configs or {}).get(kind)
            run = train(kind, prepared, spec, run_cfg, cfg)
            rows.append(evaluate(run.model, test_set, spec.label))
    return rows


# -- output ------------------------------------------------------------------

CSV_COLUMNS = ("model", "ratio", "mae", "mape", "excluded_fraction")


def write_metrics_csv(rows: Sequence[MetricsRow], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for r in rows:
        writer.writerow([r.model_name, r.split_label, f"{r.mae:.6f}", f"{r.mape:.4f}", f"{r.excluded_fraction:.6f}"])


def metrics_json(rows: Sequence[MetricsRow]) -> str:
    payload = [dict(asdict(r), model=r.model_name) for r in rows]
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def format_table(rows: Sequence[MetricsRow], dataset: str | None = None) -> str:
    """Plain-text table with Model / Division Ratio / MAE / MAPE columns.

    With ``dataset`` set, the published numbers for the same model and ratio
    are appended for comparison.
    """
    header = f"{'Model':<10} {'Division Ratio':>14} {'MAE':>8} {'MAPE':>8}"
    if dataset:
        header += f" {'ref MAE':>10} {'ref MAPE':>11}"
    lines = [header, "-" * len(header)]
    for r in rows:
        line = f"{r.model_name:<10} {r.split_label:>14} {r.mae:>8.4f} {r.mape:>7.2f}%"
        if dataset:
            ref = REFERENCE_RESULTS.get((dataset, r.model_kind, r.split_label))
            line += f" {ref[0]:>10.4f} {ref[1]:>10.2f}%" if ref else f" {'-':>10} {'-':>11}"
        lines.append(line)
    return "\n".join(lines)
