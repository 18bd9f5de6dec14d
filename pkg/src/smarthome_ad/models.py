"""CNN and TCN autoencoders for fixed-length usage signals, and their training loop."""
from __future__ import annotations

import io
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, DataError, NumericError, ShapeError
from .evaluation import SplitSpec, split
from .preprocess import UsageSignal
from .tensor import (Adam, Conv1dParams, Tensor, as_tensor, avg_pool1d, backward, conv1d, dropout,
                     load_params, mse_loss, no_grad, relu, save_params, upsample_nearest)

log = logging.getLogger(__name__)


@dataclass
class CnnAeConfig:
    input_length: int = 320
    channels: int = 1
    encoder_filters: tuple[int, ...] = (32, 16, 8)
    kernel_size: int = 7
    dropout_p: float = 0.2
    pool_s: int = 2

    def __post_init__(self):
        self.encoder_filters = tuple(int(f) for f in self.encoder_filters)
        if len(self.encoder_filters) != 3:
            raise ConfigError("CNN-AE needs exactly 3 encoder conv stages")
        if not 0 <= self.dropout_p < 1:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.pool_s < 1 or self.kernel_size < 1:
            raise ConfigError("pool_s and kernel_size must be >= 1")
        if self.input_length % self.pool_s ** 3:
            raise ConfigError(f"input_length {self.input_length} not divisible by pool_s^3")


@dataclass
class TcnAeConfig:
    input_length: int = 320
    channels: int = 1
    dilations: tuple[int, ...] = (1, 2, 4, 8, 16)
    n_filters: int = 16
    kernel_size: int = 3
    bottleneck_filters: int = 8
    pool_s: int = 4
    dropout_p: float = 0.0
    residual: bool = True

    def __post_init__(self):
        self.dilations = tuple(int(q) for q in self.dilations)
        if not self.dilations or any(q < 1 for q in self.dilations):
            raise ConfigError("dilations must be a non-empty list of integers >= 1")
        if any(b <= a for a, b in zip(self.dilations, self.dilations[1:])):
            raise ConfigError("dilations must be strictly increasing")
        if self.pool_s < 1:
            raise ConfigError("pool_s must be >= 1")
        if self.input_length % self.pool_s:
            raise ConfigError(f"input_length {self.input_length} not divisible by pool_s {self.pool_s}")
        if not 0 <= self.dropout_p < 1:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")


class Autoencoder:
    kind = "base"

    def __init__(self, config):
        self.config = config
        self._convs: dict[str, Conv1dParams] = {}

    def _conv(self, name, k, c_in, c_out, dilation=1, padding="causal", rng=None, init="glorot"):
        layer = Conv1dParams.create(k, c_in, c_out, dilation, padding, rng=rng, init=init, name=name)
        self._convs[name] = layer
        return layer

    def named_parameters(self) -> Iterator[tuple[str, Tensor]]:
        for name, layer in self._convs.items():
            yield f"{name}.weight", layer.weight
            yield f"{name}.bias", layer.bias

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        if set(own) != set(state):
            raise DataError(f"parameter names differ: missing {sorted(set(own) - set(state))}, "
                            f"unexpected {sorted(set(state) - set(own))}")
        for name, p in own.items():
            if state[name].shape != p.shape:
                raise ShapeError(f"parameter {name} shape mismatch", state[name].shape, p.shape)
            p.data = np.array(state[name], dtype=np.float64)

    def _check_input(self, x) -> Tensor:
        x = as_tensor(x)
        if x.ndim not in (2, 3) or x.shape[-2:] != (self.config.input_length, self.config.channels):
            raise ShapeError(f"{self.kind} expects [..., {self.config.input_length}, {self.config.channels}]",
                             x.shape)
        return x

    def forward(self, x, training: bool = False, rng=None) -> Tensor:
        raise NotImplementedError

    __call__ = forward

    def reconstruct(self, signals: np.ndarray, batch_size: int = 64) -> np.ndarray:
        """No-grad reconstruction of ``[N, L]`` or ``[N, L, d]`` arrays."""
        X = np.asarray(signals, dtype=np.float64)
        flat = X.ndim == 2
        if flat:
            X = X[..., None]
        out = np.empty_like(X)
        with no_grad():
            for i in range(0, len(X), batch_size):
                out[i:i + batch_size] = self.forward(Tensor(X[i:i + batch_size]), training=False).data
        return out[..., 0] if flat else out


class CnnAutoencoder(Autoencoder):
    """Three conv/ReLU/dropout/pool encoder stages mirrored by upsample/conv decoder stages.

    The decoder's last conv maps back to ``channels`` and has no activation.
    """

    kind = "cnn"

    def __init__(self, config: CnnAeConfig = CnnAeConfig(), rng=None, init: str = "glorot"):
        super().__init__(config)
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        k = config.kernel_size
        widths = (config.channels,) + config.encoder_filters
        self.encoder = [self._conv(f"enc{i}", k, widths[i], widths[i + 1], padding="same", rng=rng, init=init)
                        for i in range(3)]
        back = widths[::-1]
        self.decoder = [self._conv(f"dec{i}", k, back[i], back[i + 1], padding="same", rng=rng, init=init)
                        for i in range(3)]

    def encode(self, x, training=False, rng=None) -> Tensor:
        h = self._check_input(x)
        for layer in self.encoder:
            h = dropout(relu(conv1d(h, layer)), self.config.dropout_p, training, rng)
            h = avg_pool1d(h, self.config.pool_s)
        return h

    def decode(self, z: Tensor, training=False, rng=None) -> Tensor:
        h = z
        for i, layer in enumerate(self.decoder):
            h = conv1d(upsample_nearest(h, self.config.pool_s), layer)
            if i < len(self.decoder) - 1:
                h = dropout(relu(h), self.config.dropout_p, training, rng)
        return h

    def forward(self, x, training=False, rng=None) -> Tensor:
        return self.decode(self.encode(x, training, rng), training, rng)


class TcnAutoencoder(Autoencoder):
    """Encoder TCN -> 1x1 bottleneck conv -> average pooling; upsample -> decoder TCN -> 1x1 output conv."""

    kind = "tcn"

    def __init__(self, config: TcnAeConfig = TcnAeConfig(), rng=None, init: str = "glorot"):
        super().__init__(config)
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        self._init = init
        self.encoder_tcn = self._build_tcn("enc_tcn", config.channels, rng)
        self.bottleneck = self._conv("bottleneck", 1, config.n_filters, config.bottleneck_filters, rng=rng, init=init)
        self.decoder_tcn = self._build_tcn("dec_tcn", config.bottleneck_filters, rng)
        self.output = self._conv("output", 1, config.n_filters, config.channels, rng=rng, init=init)

    def _build_tcn(self, prefix, c_in, rng) -> list[dict]:
        cfg = self.config
        levels = []
        for i, q in enumerate(cfg.dilations):
            level = {
                "conv1": self._conv(f"{prefix}.l{i}.conv1", cfg.kernel_size, c_in, cfg.n_filters, q, rng=rng,
                                    init=self._init),
                "conv2": self._conv(f"{prefix}.l{i}.conv2", cfg.kernel_size, cfg.n_filters, cfg.n_filters, q,
                                    rng=rng, init=self._init),
                "skip": None,
            }
            if cfg.residual and c_in != cfg.n_filters:
                level["skip"] = self._conv(f"{prefix}.l{i}.skip", 1, c_in, cfg.n_filters, rng=rng, init=self._init)
            levels.append(level)
            c_in = cfg.n_filters
        return levels

    def _tcn(self, h: Tensor, levels, training, rng) -> Tensor:
        p = self.config.dropout_p
        for level in levels:
            out = dropout(relu(conv1d(h, level["conv1"])), p, training, rng)
            out = dropout(relu(conv1d(out, level["conv2"])), p, training, rng)
            if self.config.residual:
                res = h if level["skip"] is None else conv1d(h, level["skip"])
                out = relu(out + res)
            h = out
        return h

    def encode(self, x, training=False, rng=None) -> Tensor:
        h = self._check_input(x)
        h = self._tcn(h, self.encoder_tcn, training, rng)
        return avg_pool1d(conv1d(h, self.bottleneck), self.config.pool_s)

    def decode(self, z: Tensor, training=False, rng=None) -> Tensor:
        h = upsample_nearest(z, self.config.pool_s)
        h = self._tcn(h, self.decoder_tcn, training, rng)
        return conv1d(h, self.output)

    def forward(self, x, training=False, rng=None) -> Tensor:
        return self.decode(self.encode(x, training, rng), training, rng)


MODEL_KINDS = {"cnn": (CnnAutoencoder, CnnAeConfig), "tcn": (TcnAutoencoder, TcnAeConfig)}


def build_model(kind: str, config=None, seed: int | None = 0, init: str = "glorot") -> Autoencoder:
    try:
        cls, cfg_cls = MODEL_KINDS[kind]
    except KeyError:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {sorted(MODEL_KINDS)}") from None
    if config is None:
        config = cfg_cls()
    elif isinstance(config, dict):
        config = cfg_cls(**config)
    return cls(config, rng=np.random.default_rng(seed), init=init)


def conv_param_count(k: int, c_in: int, c_out: int) -> int:
    return k * c_in * c_out + c_out


def expected_param_count(kind: str, config) -> int:
    """Closed-form parameter count for a model built from ``config``."""
    if kind == "cnn":
        widths = (config.channels,) + tuple(config.encoder_filters)
        k = config.kernel_size
        back = widths[::-1]
        enc = sum(conv_param_count(k, widths[i], widths[i + 1]) for i in range(3))
        return enc + sum(conv_param_count(k, back[i], back[i + 1]) for i in range(3))
    if kind == "tcn":
        f, k = config.n_filters, config.kernel_size

        def tcn(c_in):
            total = 0
            for _ in config.dilations:
                total += conv_param_count(k, c_in, f) + conv_param_count(k, f, f)
                if config.residual and c_in != f:
                    total += conv_param_count(1, c_in, f)
                c_in = f
            return total

        return (tcn(config.channels) + conv_param_count(1, f, config.bottleneck_filters)
                + tcn(config.bottleneck_filters) + conv_param_count(1, f, config.channels))
    raise ConfigError(f"unknown model kind {kind!r}")


# -- training ----------------------------------------------------------------

@dataclass
class RunConfig:
    seed: int = 0
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-3

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")


@dataclass
class TrainRun:
    kind: str
    seed: int
    epochs: int
    batch_size: int
    losses: list[float]
    initial_loss: float
    model: Autoencoder = field(repr=False)
    n_train: int = 0
    n_test: int = 0
    split_label: str = ""

    @property
    def final_params(self) -> bytes:
        buf = io.BytesIO()
        save_params(self.model.state_dict(), buf)
        return buf.getvalue()

    def loss_log(self) -> str:
        lines = ["epoch,loss", f"0,{self.initial_loss!r}"]
        lines += [f"{i + 1},{loss!r}" for i, loss in enumerate(self.losses)]
        return "\n".join(lines) + "\n"


def stack_signals(signals: Sequence[UsageSignal | np.ndarray]) -> np.ndarray:
    rows = [s.samples if isinstance(s, UsageSignal) else np.asarray(s, dtype=np.float64) for s in signals]
    return np.stack(rows)[..., None]


def reconstruction_mse(model: Autoencoder, X: np.ndarray) -> float:
    return float(np.mean((model.reconstruct(X) - X) ** 2))


def fit(model: Autoencoder, X: np.ndarray, run_cfg: RunConfig = RunConfig()) -> tuple[list[float], float]:
    """Minimise MSE reconstruction loss on ``X`` ([N, L, d]); returns (per-epoch losses, initial loss)."""
    rng = np.random.default_rng(run_cfg.seed + 1)
    params = model.parameters()
    opt = Adam(params, lr=run_cfg.learning_rate)
    initial = reconstruction_mse(model, X)
    losses = []
    for epoch in range(run_cfg.epochs):
        order = rng.permutation(len(X))
        total = 0.0
        for b, i in enumerate(range(0, len(X), run_cfg.batch_size)):
            batch = X[order[i:i + run_cfg.batch_size]]
            opt.zero_grad()
            try:
                loss = mse_loss(model.forward(Tensor(batch), training=True, rng=rng), batch)
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericError("non-finite loss")
                backward(loss)
                opt.step()
            except NumericError as exc:
                raise NumericError(f"training diverged: {exc}", lr=run_cfg.learning_rate,
                                   epoch=epoch, batch=b) from exc
            total += value * len(batch)
        losses.append(total / len(X))
        log.debug("epoch %d loss %.6g", epoch + 1, losses[-1])
    return losses, initial


def train(model_kind: str, dataset: Sequence[UsageSignal], split_ratio: SplitSpec | str | float = "8:2",
          run_cfg: RunConfig = RunConfig(), model_config=None) -> TrainRun:
    """Train on the chronologically first part of ``dataset``; the rest is held out."""
    if len(dataset) < 10:
        raise DataError(f"need at least 10 usage signals to train, got {len(dataset)}")
    spec = SplitSpec.parse(split_ratio)
    train_set, test_set = split(list(dataset), spec)
    model = build_model(model_kind, model_config, seed=run_cfg.seed)
    X = stack_signals(train_set)
    if X.shape[1:] != (model.config.input_length, model.config.channels):
        raise ShapeError("signal length does not match model input", X.shape[1:],
                         (model.config.input_length, model.config.channels))
    losses, initial = fit(model, X, run_cfg)
    return TrainRun(kind=model_kind, seed=run_cfg.seed, epochs=run_cfg.epochs, batch_size=run_cfg.batch_size,
                    losses=losses, initial_loss=initial, model=model, n_train=len(train_set),
                    n_test=len(test_set), split_label=spec.label)


# -- persistence -------------------------------------------------------------

def save_model(model: Autoencoder, params_stream, norm_max: float, extra: dict | None = None) -> dict:
    """Write parameters to ``params_stream``; return the JSON sidecar dict."""
    save_params(model.state_dict(), params_stream)
    cfg = asdict(model.config)
    sidecar = {"kind": model.kind, "config": {k: list(v) if isinstance(v, tuple) else v for k, v in cfg.items()},
               "norm_max": float(norm_max), "n_params": model.n_params}
    if extra:
        sidecar.update(extra)
    return sidecar


def load_model(params_stream, sidecar: dict) -> tuple[Autoencoder, float]:
    model = build_model(sidecar["kind"], dict(sidecar["config"]), seed=0)
    model.load_state_dict(load_params(params_stream))
    return model, float(sidecar["norm_max"])


def sidecar_json(sidecar: dict) -> str:
    return json.dumps(sidecar, indent=2, sort_keys=True) + "\n"
