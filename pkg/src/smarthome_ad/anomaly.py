"""Previous-day sigma thresholding of autoencoder reconstructions.

A timestep is anomalous when its actual power exceeds the reconstruction
by more than twice the population standard deviation of the preceding
24 hours of resampled values.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, InsufficientHistoryError
from .preprocess import RegularSeries, SegmentationConfig, segment_usages

DAY_SECONDS = 86400


def population_std(values) -> float:
    """Square root of the mean squared deviation (divisor n)."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0:
        raise InsufficientHistoryError("standard deviation of an empty window")
    return float(np.sqrt(np.mean((x - x.mean()) ** 2)))


def sigma_prev_day(series: RegularSeries, t: int, window_seconds: int = DAY_SECONDS) -> float:
    """Population sigma of the buckets in ``[ts(t) - window_seconds, ts(t))``."""
    lo = max(0, t - window_seconds // series.r)
    if t <= 0 or lo >= t:
        raise InsufficientHistoryError(f"no samples in the {window_seconds} s before bucket {t}")
    return population_std(series.values[lo:t])


def threshold(y_hat, sigma):
    """gamma = y_hat + 2 * sigma (scalar or array)."""
    if np.any(np.asarray(sigma) < 0):
        raise ContractError("sigma must be >= 0")
    return y_hat + 2.0 * sigma


def _rolling_sigma(values: np.ndarray, start: int, stop: int, h: int) -> np.ndarray:
    """Previous-``h``-bucket population sigma for every index in ``[start, stop)``; needs start >= h."""
    windows = sliding_window_view(values[start - h:stop - 1], h)
    return windows.std(axis=1)


@dataclass
class AnomalyEvent:
    signal: int
    start: int
    end: int
    peak_excess: float
    n_timesteps: int

    def overlaps(self, start: int, end: int) -> bool:
        return self.start < end and start < self.end


@dataclass
class AnomalyReport:
    """Per-timestep decisions for every scored usage signal.

    Per-timestep arrays are aligned; ``signal_index`` tells which usage
    signal each timestep belongs to.  Event ``end`` is exclusive
    (timestamp of the last anomalous bucket plus r).
    """

    r: int
    norm_max: float
    signal_index: np.ndarray
    timestamps: np.ndarray
    actual: np.ndarray
    predicted: np.ndarray
    sigma: np.ndarray
    threshold: np.ndarray
    is_anomaly: np.ndarray
    events: list[AnomalyEvent] = field(default_factory=list)
    signals: list[dict] = field(default_factory=list)
    skipped: list[dict] = field(default_factory=list)

    @property
    def n_anomalous(self) -> int:
        return int(self.is_anomaly.sum())

    def summary(self) -> dict:
        return {"n_signals_scored": len(self.signals), "n_signals_skipped": len(self.skipped),
                "n_timesteps": int(len(self.timestamps)), "n_anomalous_timesteps": self.n_anomalous,
                "n_events": len(self.events)}

    def to_json(self) -> str:
        payload = {
            "r": self.r, "norm_max": self.norm_max, "summary": self.summary(),
            "events": [vars(e) for e in self.events], "signals": self.signals, "skipped": self.skipped,
        }
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"

    def write_csv(self, stream) -> None:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["signal", "timestamp", "actual", "predicted", "sigma", "threshold", "is_anomaly"])
        for row in zip(self.signal_index, self.timestamps, self.actual, self.predicted, self.sigma,
                       self.threshold, self.is_anomaly):
            w.writerow([int(row[0]), int(row[1]), repr(float(row[2])), repr(float(row[3])),
                        repr(float(row[4])), repr(float(row[5])), int(bool(row[6]))])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


def _events(sig: int, ts: np.ndarray, flags: np.ndarray, excess: np.ndarray, r: int) -> list[AnomalyEvent]:
    out = []
    padded = np.concatenate(([False], flags, [False])).astype(np.int8)
    edges = np.diff(padded)
    for a, b in zip(np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)):
        out.append(AnomalyEvent(sig, int(ts[a]), int(ts[b - 1]) + r, float(excess[a:b].max()), int(b - a)))
    return out


def detect(series: RegularSeries, model, norm_max: float,
           seg_config: SegmentationConfig = SegmentationConfig(), segments=None,
           history_seconds: int = DAY_SECONDS) -> AnomalyReport:
    """Score every usage in ``series`` against ``model``'s reconstruction.

    A usage is reconstructed from its length-L window, zero-padded past the
    usage end exactly like the training inputs.  Buckets of a usage that
    ran past the maximum operation period (continuation segments) have no
    normal counterpart, so their predicted value is the off state, 0 W.
    Usages with less than ``history_seconds`` of preceding data are skipped.
    """
    L = model.config.input_length
    h = history_seconds // series.r
    values = series.values
    segments = segment_usages(series, seg_config) if segments is None else segments

    windows, plans, skipped = [], [], []
    for i, seg in enumerate(segments):
        score = (seg.start_index, min(seg.stop_index, seg.start_index + L))
        if score[0] < h:
            skipped.append({"signal": i, "start": int(seg.start_timestamp), "reason": "insufficient history"})
            continue
        win = np.zeros(L)
        win[:score[1] - score[0]] = values[score[0]:score[1]]
        windows.append(np.clip(win / norm_max, 0.0, 1.0))
        plans.append((i, seg, score))

    recon = model.reconstruct(np.stack(windows)) if windows else np.empty((0, L))

    cols = {k: [] for k in ("sig", "ts", "actual", "pred", "sigma")}
    events, signals = [], []
    for (i, seg, (a, b)), win, rec in zip(plans, windows, recon):
        n = b - a
        if seg.continuation:
            rec = np.zeros(L)
        actual = values[a:b]
        pred = rec[:n] * norm_max
        sigma = _rolling_sigma(values, a, b, h)
        gamma = threshold(pred, sigma)
        flags = actual > gamma
        ts = series.start_timestamp + series.r * np.arange(a, b, dtype=np.int64)
        ev = _events(i, ts, flags, actual - gamma, series.r)
        events.extend(ev)
        signals.append({
            "signal": i, "start": int(seg.start_timestamp), "n_scored": int(b - a),
            "truncated": bool(seg.truncated), "continuation": bool(seg.continuation),
            "recon_mse": float(np.mean((rec[:n] - win[:n]) ** 2)),
            "n_anomalous": int(flags.sum()), "n_events": len(ev),
        })
        cols["sig"].append(np.full(b - a, i))
        cols["ts"].append(ts)
        cols["actual"].append(actual)
        cols["pred"].append(pred)
        cols["sigma"].append(sigma)

    def cat(key, dtype=np.float64):
        return np.concatenate(cols[key]).astype(dtype) if cols[key] else np.empty(0, dtype=dtype)

    predicted, sigma = cat("pred"), cat("sigma")
    actual = cat("actual")
    gamma = threshold(predicted, sigma)
    return AnomalyReport(r=series.r, norm_max=float(norm_max), signal_index=cat("sig", np.int64),
                         timestamps=cat("ts", np.int64), actual=actual, predicted=predicted, sigma=sigma,
                         threshold=gamma, is_anomaly=actual > gamma, events=events, signals=signals,
                         skipped=skipped)


def event_scores(events, labels) -> dict:
    """Event-level precision / recall / F1 of detected events against labelled intervals.

    A label is recalled when any event overlaps it; an event is a true
    positive when it overlaps any label.
    """
    spans = [(lab.start, lab.end) for lab in labels]
    tp_events = sum(any(e.overlaps(s, t) for s, t in spans) for e in events)
    hit_labels = sum(any(e.overlaps(s, t) for e in events) for s, t in spans)
    precision = tp_events / len(events) if events else 0.0
    recall = hit_labels / len(spans) if spans else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"precision": precision, "recall": recall, "f1": f1, "n_events": len(events),
            "n_labels": len(spans), "events_on_labels": tp_events, "labels_hit": hit_labels}


def plot_report(report: AnomalyReport, stream, max_signals: int = 6) -> None:
    """SVG of actual power against the threshold curve for the most anomalous signals."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ranked = sorted(report.signals, key=lambda s: (-s["n_anomalous"], s["signal"]))[:max_signals]
    n = max(1, len(ranked))
    fig, axes = plt.subplots(n, 1, figsize=(8, 2.4 * n), squeeze=False)
    for ax, info in zip(axes[:, 0], ranked):
        m = report.signal_index == info["signal"]
        minutes = (report.timestamps[m] - report.timestamps[m][0]) / 60.0
        ax.plot(minutes, report.actual[m], label="actual", lw=1.0)
        ax.plot(minutes, report.threshold[m], label="threshold", lw=1.0, ls="--")
        flagged = report.is_anomaly[m]
        ax.scatter(minutes[flagged], report.actual[m][flagged], s=6, c="red", label="anomaly", zorder=3)
        ax.set_title(f"usage {info['signal']} @ {info['start']}", fontsize=9)
        ax.set_ylabel("W")
    axes[-1, 0].set_xlabel("minutes since usage start")
    axes[0, 0].legend(loc="upper right", fontsize=7)
    fig.tight_layout()
    # fixed salt so element ids, and hence the whole file, repeat across runs
    with matplotlib.rc_context({"svg.hashsalt": "smarthome-ad"}):
        fig.savefig(stream, format="svg", metadata={"Date": None})
    plt.close(fig)
