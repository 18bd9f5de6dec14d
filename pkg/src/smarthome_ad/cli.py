"""File-driven command line: synth, preprocess, train, detect, eval.

Every stage reads and writes plain artifacts so a failed run can be
resumed from the last good stage.  Errors end the process with a single
``error: code=<n> kind=<ExceptionName> message=<text>`` line on stderr.
"""
from __future__ import annotations

import argparse
import contextlib
import dataclasses
import io
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields

import yaml

from . import anomaly, evaluation, models, synth
from . import preprocess as pp
from .errors import ConfigError, DataError, SmartHomeADError
from .ingest import parse_refit_csv, write_refit_csv

PARAMS_FILE = "model.params"
SIDECAR_FILE = "model.json"
LOSS_FILE = "loss_log.csv"
REGULAR_FILE = "regular.csv"
MANIFEST_FILE = "segments.json"


@dataclass
class PipelineConfig:
    """Every knob of the pipeline; round-trips through a single YAML file."""

    r: int = 10
    L: int = 320
    on_threshold: float = 5.0
    merge_gap_max: int = 600
    max_duration: int = 3200
    column: str = "Appliance1"
    norm_max: str | float = "train_peak"
    model_kind: str = "tcn"
    model: dict = field(default_factory=dict)
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-3
    split: str = "8:2"
    split_timestamp: int | None = None
    history_seconds: int = anomaly.DAY_SECONDS
    epsilon_floor: float = evaluation.DEFAULT_EPSILON_FLOOR
    seed: int = 0
    synth: dict = field(default_factory=lambda: {"n_train": 200, "n_test": 50, "n_anomalies": 20,
                                                 "sigma_multiple": 3.5})

    def __post_init__(self):
        if self.model_kind not in models.MODEL_KINDS:
            raise ConfigError(f"model_kind must be one of {sorted(models.MODEL_KINDS)}, got {self.model_kind!r}")
        if isinstance(self.norm_max, str) and self.norm_max != "train_peak":
            raise ConfigError("norm_max must be 'train_peak' or a positive number")
        if not isinstance(self.norm_max, str) and not float(self.norm_max) > 0:
            raise ConfigError("norm_max must be 'train_peak' or a positive number")
        unknown = set(self.synth) - {"n_train", "n_test", "n_anomalies", "sigma_multiple"}
        if unknown:
            raise ConfigError(f"unknown synth keys: {sorted(unknown)}")
        evaluation.SplitSpec.parse(self.split)
        self.seg_config()
        self.run_config()
        self.model_config()

    @classmethod
    def from_dict(cls, data: dict | None) -> "PipelineConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        if "synth" in data:
            data["synth"] = {**cls().synth, **(data["synth"] or {})}
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | None) -> "PipelineConfig":
        if path is None:
            return cls()
        try:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        if data is not None and not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def seg_config(self) -> pp.SegmentationConfig:
        return pp.SegmentationConfig(self.on_threshold, self.merge_gap_max, self.max_duration)

    def run_config(self) -> models.RunConfig:
        return models.RunConfig(seed=self.seed, epochs=self.epochs, batch_size=self.batch_size,
                                learning_rate=self.learning_rate)

    def model_config(self):
        cfg_cls = models.MODEL_KINDS[self.model_kind][1]
        try:
            return cfg_cls(**{"input_length": self.L, **self.model})
        except TypeError as exc:
            raise ConfigError(f"bad model config: {exc}") from exc


# -- file helpers --------------------------------------------------------------

@contextlib.contextmanager
def atomic_open(path: str, mode: str = "w"):
    """Write to a temp file in the target directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        kwargs = {} if "b" in mode else {"encoding": "utf-8", "newline": ""}
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_text(path: str, text: str) -> None:
    with atomic_open(path) as fh:
        fh.write(text)


def _read_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise DataError(f"missing input file {path}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from exc


def load_stage(prep_dir: str) -> tuple[pp.RegularSeries, list[pp.Segment], dict]:
    """Read the regular series and segment manifest written by ``preprocess``."""
    path = os.path.join(prep_dir, REGULAR_FILE)
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            regular = pp.read_regular_csv(fh)
    except FileNotFoundError as exc:
        raise DataError(f"missing input file {path}") from exc
    manifest = _read_json(os.path.join(prep_dir, MANIFEST_FILE))
    return regular, pp.segments_from_manifest(manifest, regular), manifest


def load_model_dir(model_dir: str):
    sidecar = _read_json(os.path.join(model_dir, SIDECAR_FILE))
    path = os.path.join(model_dir, PARAMS_FILE)
    try:
        with open(path, "rb") as fh:
            return models.load_model(fh, sidecar)
    except FileNotFoundError as exc:
        raise DataError(f"missing input file {path}") from exc


def _parse_input(path: str, cfg: PipelineConfig):
    if not os.path.exists(path):
        raise DataError(f"missing input file {path}")
    return parse_refit_csv(path, cfg.column)


def _train_segments(segments, cfg: PipelineConfig) -> tuple[list, list]:
    """Chronological train/held-out partition: by ``split_timestamp`` if set, else by ``split``."""
    if cfg.split_timestamp is not None:
        before = [s for s in segments if s.start_timestamp < cfg.split_timestamp]
        after = [s for s in segments if s.start_timestamp >= cfg.split_timestamp]
        return before, after
    return evaluation.split(segments, cfg.split)


def _norm_max(train_segs, cfg: PipelineConfig) -> float:
    return pp.fit_norm_max(train_segs) if cfg.norm_max == "train_peak" else float(cfg.norm_max)


# -- commands --------------------------------------------------------------------

def cmd_synth(cfg: PipelineConfig, out_dir: str) -> dict:
    """Write ``series.csv`` (with anomalies), ``clean.csv``, ``labels.json`` and ``benchmark.json``.

    The power column is named ``cfg.column`` so later stages read it back unchanged.
    """
    bm = synth.build_benchmark(seed=cfg.seed, r=cfg.r, **cfg.synth)
    for name, series in (("series.csv", bm.series), ("clean.csv", bm.clean)):
        with atomic_open(os.path.join(out_dir, name)) as fh:
            write_refit_csv(dataclasses.replace(series, appliance_label=str(cfg.column)), fh)
    write_text(os.path.join(out_dir, "labels.json"), synth.labels_json(bm.labels))
    info = {"n_train": bm.n_train, "n_test": bm.n_test, "split_timestamp": int(bm.split_timestamp),
            "anomalous_usages": bm.anomalous_usages, "appliance": bm.series.appliance_label, "seed": cfg.seed}
    write_text(os.path.join(out_dir, "benchmark.json"), json.dumps(info, indent=2, sort_keys=True) + "\n")
    return info


def cmd_preprocess(input_csv: str, cfg: PipelineConfig, out_dir: str) -> dict:
    """Resample and segment one CSV into ``regular.csv`` and ``segments.json``."""
    series = _parse_input(input_csv, cfg)
    regular, segments = pp.preprocess_series(series, cfg.r, cfg.seg_config())
    manifest = pp.segments_manifest(regular, segments, cfg.seg_config())
    manifest["source"] = {"house_id": series.house_id, "appliance": series.appliance_label,
                          "dropped_rows": series.dropped_rows, "duplicate_rows": series.duplicate_rows}
    with atomic_open(os.path.join(out_dir, REGULAR_FILE)) as fh:
        pp.write_regular_csv(regular, fh)
    with atomic_open(os.path.join(out_dir, MANIFEST_FILE)) as fh:
        pp.dump_manifest(manifest, fh)
    return {"input": input_csv, "n_buckets": len(regular), "n_segments": len(segments)}


def cmd_train(prep_dir: str, cfg: PipelineConfig, out_dir: str) -> models.TrainRun:
    """Train ``cfg.model_kind`` on the training partition of a preprocessed series."""
    _, segments, _ = load_stage(prep_dir)
    train_segs, held_out = _train_segments(segments, cfg)
    if len(train_segs) < 10:
        raise DataError(f"need at least 10 training segments, got {len(train_segs)}")
    norm = _norm_max(train_segs, cfg)
    X = models.stack_signals([pp.to_usage_signal(s, cfg.L, norm) for s in train_segs])
    model = models.build_model(cfg.model_kind, cfg.model_config(), seed=cfg.seed)
    losses, initial = models.fit(model, X, cfg.run_config())
    run = models.TrainRun(kind=cfg.model_kind, seed=cfg.seed, epochs=cfg.epochs, batch_size=cfg.batch_size,
                          losses=losses, initial_loss=initial, model=model, n_train=len(train_segs),
                          n_test=len(held_out), split_label=evaluation.SplitSpec.parse(cfg.split).label)
    buf = io.BytesIO()
    sidecar = models.save_model(model, buf, norm, {"n_train": run.n_train, "seed": cfg.seed,
                                                    "epochs": cfg.epochs, "learning_rate": cfg.learning_rate})
    with atomic_open(os.path.join(out_dir, PARAMS_FILE), "wb") as fh:
        fh.write(buf.getvalue())
    write_text(os.path.join(out_dir, SIDECAR_FILE), models.sidecar_json(sidecar))
    write_text(os.path.join(out_dir, LOSS_FILE), run.loss_log())
    return run


def cmd_detect(input_csv: str, model_dir: str, cfg: PipelineConfig, out_dir: str,
               fmt: str = "csv", plot: bool = False) -> anomaly.AnomalyReport:
    """Score the usages of ``input_csv`` (only those from ``split_timestamp`` on, if set)."""
    model, norm = load_model_dir(model_dir)
    series = _parse_input(input_csv, cfg)
    regular, segments = pp.preprocess_series(series, cfg.r, cfg.seg_config())
    if cfg.split_timestamp is not None:
        segments = [s for s in segments if s.start_timestamp >= cfg.split_timestamp]
    report = anomaly.detect(regular, model, norm, cfg.seg_config(), segments, cfg.history_seconds)
    if fmt == "csv":
        write_text(os.path.join(out_dir, "report.csv"), report.to_csv())
        write_text(os.path.join(out_dir, "events.json"), report.to_json())
    else:
        payload = json.loads(report.to_json())
        payload["timesteps"] = {
            "signal": report.signal_index.tolist(), "timestamp": report.timestamps.tolist(),
            "actual": report.actual.tolist(), "predicted": report.predicted.tolist(),
            "sigma": report.sigma.tolist(), "threshold": report.threshold.tolist(),
            "is_anomaly": report.is_anomaly.astype(int).tolist(),
        }
        write_text(os.path.join(out_dir, "report.json"), json.dumps(payload, indent=2, sort_keys=True) + "\n")
    if plot:
        with atomic_open(os.path.join(out_dir, "report.svg")) as fh:
            anomaly.plot_report(report, fh)
    return report


def cmd_eval(model_dir: str | None, prep_dir: str, cfg: PipelineConfig, out_dir: str | None = None,
             fmt: str = "csv", protocol: bool = False, dataset: str | None = None) -> list[evaluation.MetricsRow]:
    """MAE / MAPE on the held-out segments.

    With ``protocol`` both model kinds are trained and evaluated at every
    standard division ratio and ``model_dir`` is ignored.
    """
    _, segments, _ = load_stage(prep_dir)
    if protocol:
        model_cfgs = {k: PipelineConfig.from_dict({**cfg.to_dict(), "model_kind": k,
                                                   "model": cfg.model if k == cfg.model_kind else {}}).model_config()
                      for k in models.MODEL_KINDS}
        rows = evaluation.run_protocol(segments, kinds=tuple(models.MODEL_KINDS), run_cfg=cfg.run_config(),
                                       model_configs=model_cfgs, L=cfg.L)
    else:
        if model_dir is None:
            raise ConfigError("eval needs --model unless --protocol is given")
        model, norm = load_model_dir(model_dir)
        _, held_out = _train_segments(segments, cfg)
        if not held_out:
            raise DataError("no held-out segments to evaluate")
        signals = [pp.to_usage_signal(s, model.config.input_length, norm) for s in held_out]
        label = "" if cfg.split_timestamp is not None else evaluation.SplitSpec.parse(cfg.split).label
        rows = [evaluation.evaluate(model, signals, label, cfg.epsilon_floor)]
    if out_dir is not None:
        if fmt == "csv":
            with atomic_open(os.path.join(out_dir, "metrics.csv")) as fh:
                evaluation.write_metrics_csv(rows, fh)
        else:
            write_text(os.path.join(out_dir, "metrics.json"), evaluation.metrics_json(rows))
    return rows


# -- argument parsing ------------------------------------------------------------

def _preprocess_job(args):
    path, cfg_dict, out_dir = args
    return cmd_preprocess(path, PipelineConfig.from_dict(cfg_dict), out_dir)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML pipeline config; unknown keys are rejected")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers (per input file)")
    common.add_argument("--format", choices=("csv", "json"), default="csv", dest="fmt")
    common.add_argument("--plot", action="store_true", help="also write an SVG (detect)")

    parser = argparse.ArgumentParser(prog="smarthome-ad", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a labelled synthetic benchmark")
    p.add_argument("--out", required=True)

    p = sub.add_parser("preprocess", parents=[common], help="resample and segment CSV files")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", required=True, help="output dir (one subdir per input when several)")

    p = sub.add_parser("train", parents=[common], help="train an autoencoder on preprocessed segments")
    p.add_argument("segments", help="directory written by preprocess")
    p.add_argument("--out", required=True)

    p = sub.add_parser("detect", parents=[common], help="flag anomalous timesteps")
    p.add_argument("input")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", parents=[common], help="MAE / MAPE on held-out segments")
    p.add_argument("segments")
    p.add_argument("--model")
    p.add_argument("--out")
    p.add_argument("--protocol", action="store_true", help="train both models at 9:1, 8:2 and 7:3")
    p.add_argument("--dataset", choices=sorted({key[0] for key in evaluation.REFERENCE_RESULTS}),
                   help="print published numbers alongside")
    return parser


def _preprocess_many(inputs, cfg, out, jobs):
    if len(inputs) == 1:
        return [cmd_preprocess(inputs[0], cfg, out)]
    stems = [os.path.splitext(os.path.basename(p))[0] for p in inputs]
    if len(set(stems)) != len(stems):
        raise ConfigError("input files must have distinct names")
    tasks = [(p, cfg.to_dict(), os.path.join(out, s)) for p, s in zip(inputs, stems)]
    if jobs <= 1:
        return [_preprocess_job(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_preprocess_job, tasks))  # map keeps input order


def run(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    args = build_parser().parse_args(argv)
    cfg = PipelineConfig.load(args.config)
    if args.seed is not None:
        cfg = PipelineConfig.from_dict({**cfg.to_dict(), "seed": args.seed})
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")

    if args.command == "synth":
        info = cmd_synth(cfg, args.out)
        print(f"wrote benchmark to {args.out} (split_timestamp={info['split_timestamp']})", file=stdout)
    elif args.command == "preprocess":
        for res in _preprocess_many(args.inputs, cfg, args.out, args.jobs):
            print(f"{res['input']}: {res['n_buckets']} buckets, {res['n_segments']} segments", file=stdout)
    elif args.command == "train":
        run_ = cmd_train(args.segments, cfg, args.out)
        print(f"trained {run_.kind} on {run_.n_train} signals: loss {run_.initial_loss:.6g} -> "
              f"{run_.losses[-1]:.6g}", file=stdout)
    elif args.command == "detect":
        report = cmd_detect(args.input, args.model, cfg, args.out, args.fmt, args.plot)
        s = report.summary()
        print(f"{s['n_signals_scored']} usages scored, {s['n_events']} events, "
              f"{s['n_anomalous_timesteps']} anomalous timesteps", file=stdout)
    elif args.command == "eval":
        rows = cmd_eval(args.model, args.segments, cfg, args.out, args.fmt, args.protocol, args.dataset)
        print(evaluation.format_table(rows, args.dataset), file=stdout)
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except SmartHomeADError as exc:
        message = " ".join(str(exc).split())
        print(f"error: code={exc.exit_code} kind={type(exc).__name__} message={message}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
