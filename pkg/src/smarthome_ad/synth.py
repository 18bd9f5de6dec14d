"""Labelled synthetic appliance series with injected anomalies."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError
from .ingest import ApplianceSeries

ANOMALY_KINDS = ("spike", "elongation", "level_shift", "stuck_on")


@dataclass(frozen=True)
class Phase:
    duration: int
    watts: float
    jitter: float = 0.05


@dataclass(frozen=True)
class CycleTemplate:
    phases: tuple[Phase, ...]
    gap_min: int = 5 * 3600
    gap_max: int = 11 * 3600
    sample_interval: int = 8
    label: str = "Dishwasher"

    def __post_init__(self):
        if not self.phases:
            raise ConfigError("template needs at least one phase")
        for p in self.phases:
            if p.duration <= 0 or p.watts < 0 or not 0 <= p.jitter < 1:
                raise ConfigError(f"invalid phase {p}")
        if not 0 < self.gap_min <= self.gap_max:
            raise ConfigError("need 0 < gap_min <= gap_max")
        if self.sample_interval <= 0:
            raise ConfigError("sample_interval must be > 0")

    @property
    def cycle_duration(self) -> int:
        return sum(p.duration for p in self.phases)

    def with_jitter(self, jitter: float) -> "CycleTemplate":
        return CycleTemplate(tuple(Phase(p.duration, p.watts, jitter) for p in self.phases),
                             self.gap_min, self.gap_max, self.sample_interval, self.label)


DISHWASHER = CycleTemplate(phases=(
    Phase(600, 80.0),     # pre-wash
    Phase(900, 2000.0),   # heat
    Phase(1200, 120.0),   # wash
    Phase(500, 1400.0),   # heat-dry
))


@dataclass
class AnomalyLabel:
    kind: str
    start: int
    end: int
    magnitude: float

    def __post_init__(self):
        if self.kind not in ANOMALY_KINDS:
            raise ConfigError(f"unknown anomaly kind {self.kind!r}")
        if not self.start < self.end:
            raise ConfigError(f"label start {self.start} must precede end {self.end}")
        if not self.magnitude > 0:
            raise ConfigError("label magnitude must be > 0")


def generate(template: CycleTemplate = DISHWASHER, n_usages: int = 1, seed=0,
             start_timestamp: int = 1_400_000_000) -> ApplianceSeries:
    """Regularly sampled series of ``n_usages`` appliance cycles separated by random gaps.

    The series opens and closes with an off period of one sampled gap.
    Each usage draws one level per phase, ``watts * (1 + U(-jitter, jitter))``.
    Usage start times are kept in ``series.meta["usage_starts"]``.
    """
    if n_usages < 1:
        raise ConfigError("n_usages must be >= 1")
    rng = np.random.default_rng(seed)
    dt = template.sample_interval
    gaps = rng.integers(template.gap_min, template.gap_max + 1, size=n_usages + 1)
    levels = np.array([[p.watts * (1.0 + rng.uniform(-p.jitter, p.jitter)) if p.jitter else p.watts
                        for p in template.phases] for _ in range(n_usages)])
    durations = np.array([p.duration for p in template.phases])
    cycle = int(durations.sum())

    starts = start_timestamp + np.cumsum(gaps[:-1]) + cycle * np.arange(n_usages)
    end = int(starts[-1]) + cycle + int(gaps[-1])
    ts = np.arange(start_timestamp, end + 1, dt, dtype=np.int64)

    watts = np.zeros(len(ts))
    usage = np.searchsorted(starts, ts, side="right") - 1
    offset = ts - starts[np.clip(usage, 0, None)]
    active = (usage >= 0) & (offset < cycle)
    phase_ends = np.cumsum(durations)
    phase = np.searchsorted(phase_ends, offset[active], side="right")
    watts[active] = levels[usage[active], phase]

    return ApplianceSeries(house_id=0, appliance_label=template.label, timestamps=ts, watts=watts,
                           meta={"usage_starts": [int(s) for s in starts], "cycle_duration": cycle})


def inject(series: ApplianceSeries, labels, seed=0) -> tuple[ApplianceSeries, list[AnomalyLabel]]:
    """Apply labelled anomalies to a copy of ``series``.

    * spike: adds ``magnitude * peak`` (peak = series maximum) over the span,
      with a seeded ripple of up to +10 % on top
    * elongation: holds the level of the phase in progress at ``start``
    * level_shift: adds ``magnitude`` watts
    * stuck_on: holds the last non-zero reading before ``start``

    Readings outside the labelled spans are untouched.
    """
    labels = list(labels)
    ts = series.timestamps
    ordered = sorted(labels, key=lambda lab: lab.start)
    for a, b in zip(ordered, ordered[1:]):
        if b.start < a.end:
            raise ConfigError(f"overlapping anomaly labels at {a.start} and {b.start}")
    for lab in labels:
        if lab.start < ts[0] or lab.end > ts[-1] + 1:
            raise ConfigError(f"label [{lab.start}, {lab.end}) outside series span")

    rng = np.random.default_rng(seed)
    watts = series.watts.copy()
    peak = float(series.watts.max())
    for lab in labels:
        span = (ts >= lab.start) & (ts < lab.end)
        if not span.any():
            continue
        first = int(np.argmax(span))
        if lab.kind == "spike":
            watts[span] += lab.magnitude * peak * (1.0 + 0.1 * rng.random(int(span.sum())))
        elif lab.kind == "level_shift":
            watts[span] += lab.magnitude
        elif lab.kind == "elongation":
            watts[span] = series.watts[first]
        elif lab.kind == "stuck_on":
            before = np.flatnonzero(series.watts[:first] > 0)
            if len(before) == 0:
                raise ConfigError(f"stuck_on at {lab.start} has no prior active reading")
            watts[span] = series.watts[before[-1]]
    out = ApplianceSeries(series.house_id, series.appliance_label, ts.copy(), watts,
                          meta=dict(series.meta))
    return out, labels


def labels_json(labels) -> str:
    return json.dumps([asdict(lab) for lab in labels], indent=2, sort_keys=True) + "\n"


def labels_from_json(text: str) -> list[AnomalyLabel]:
    return [AnomalyLabel(**rec) for rec in json.loads(text)]


# -- benchmark -------------------------------------------------------------------

@dataclass
class Benchmark:
    clean: ApplianceSeries
    series: ApplianceSeries
    labels: list[AnomalyLabel]
    n_train: int
    n_test: int
    anomalous_usages: list[int] = field(default_factory=list)

    @property
    def usage_starts(self) -> list[int]:
        return self.clean.meta["usage_starts"]

    @property
    def split_timestamp(self) -> int:
        """First timestamp belonging to the test period."""
        return self.usage_starts[self.n_train]


def build_benchmark(template: CycleTemplate = DISHWASHER, n_train: int = 200, n_test: int = 50,
                    n_anomalies: int = 20, seed: int = 0, sigma_multiple: float = 3.5,
                    r: int = 10) -> Benchmark:
    """Generate ``n_train + n_test`` usages and inject anomalies into test usages.

    Kinds cycle through spike, elongation, level_shift and stuck_on.  Each
    anomaly's excess over the clean signal is at least ``sigma_multiple``
    times the previous-day sigma at its start (spike and level_shift are
    sized to that; elongation and stuck_on only use usages where they
    already clear it).  Placement assumes the default dishwasher phases.
    """
    from .preprocess import ResampleConfig, resample

    if n_anomalies > n_test:
        raise ConfigError("cannot inject more anomalies than there are test usages")
    clean = generate(template, n_train + n_test, seed)
    reg = resample(clean, ResampleConfig.for_series(clean, r))
    h = 86400 // r

    def sigma_at(t):
        i = (t - reg.start_timestamp) // r
        return float(reg.values[max(0, i - h):i].std())

    durations = np.cumsum([0] + [p.duration for p in template.phases])
    cycle = int(durations[-1])
    dt = template.sample_interval
    rng = np.random.default_rng(seed + 7919)
    candidates = list(rng.permutation(np.arange(n_train, n_train + n_test)))
    starts = clean.meta["usage_starts"]

    labels, used = [], []
    kind_i = 0
    while len(labels) < n_anomalies and candidates:
        kind = ANOMALY_KINDS[kind_i % len(ANOMALY_KINDS)]
        placed = False
        for u in list(candidates):
            us = starts[u]
            if kind == "spike":
                a, b = us + durations[2] + 300, us + durations[2] + 800
            elif kind == "level_shift":
                a, b = us + durations[2] + 100, us + durations[3] - 100
            elif kind == "elongation":
                a, b = us + durations[1] + 60, us + durations[2] + 600
            else:
                a, b = us + cycle, us + cycle + 900
            a = int(a)
            b = int(b)
            sigma = sigma_at(a)
            need = sigma_multiple * sigma
            idx = np.searchsorted(clean.timestamps, a)
            if kind == "spike":
                magnitude = max(need, 1.0) / float(clean.watts.max())
            elif kind == "level_shift":
                magnitude = max(need, 1.0)
            elif kind == "elongation":
                wash = clean.watts[np.searchsorted(clean.timestamps, us + durations[2] + dt)]
                magnitude = float(clean.watts[idx] - wash)
                if magnitude < need:
                    continue
            else:
                last = clean.watts[np.searchsorted(clean.timestamps, us + cycle) - 1]
                magnitude = float(last)
                if magnitude < need:
                    continue
            labels.append(AnomalyLabel(kind, a, b, float(magnitude)))
            candidates.remove(u)
            used.append(int(u))
            placed = True
            break
        if not placed:
            raise ConfigError(f"no test usage can host a {kind} anomaly of {sigma_multiple} sigma")
        kind_i += 1

    injected, labels = inject(clean, labels, seed)
    return Benchmark(clean=clean, series=injected, labels=labels, n_train=n_train, n_test=n_test,
                     anomalous_usages=sorted(used))
