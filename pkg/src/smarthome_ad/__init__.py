"""Appliance-level energy anomaly detection with convolutional and TCN autoencoders."""
from .anomaly import AnomalyReport, detect, sigma_prev_day, threshold
from .evaluation import MetricsRow, SplitSpec, evaluate, mae, mape, split
from .ingest import ApplianceSeries, parse_refit_csv, series_stats
from .models import (CnnAeConfig, CnnAutoencoder, RunConfig, TcnAeConfig, TcnAutoencoder, TrainRun,
                     build_model, train)
from .preprocess import (RegularSeries, ResampleConfig, SegmentationConfig, UsageSignal, gap_fill_limit,
                         resample, segment_usages, to_usage_signal)
from .synth import DISHWASHER, AnomalyLabel, CycleTemplate, generate, inject

__version__ = "0.1.0"
