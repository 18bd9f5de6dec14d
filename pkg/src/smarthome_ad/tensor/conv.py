"""Dilated 1-D convolution with ``same`` and ``causal`` padding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ShapeError
from .core import Tensor, _as_batched, _result

PADDINGS = ("same", "causal")


@dataclass
class Conv1dParams:
    """Weights are stored as ``[k, in_channels, out_channels]``."""

    weight: Tensor
    bias: Tensor
    dilation: int = 1
    padding: str = "causal"

    def __post_init__(self):
        if self.weight.ndim != 3:
            raise ShapeError("conv weight must be [k, in, out]", self.weight.shape)
        if self.bias.shape != (self.out_channels,):
            raise ShapeError("conv bias must be [out]", self.bias.shape, (self.out_channels,))
        if self.dilation < 1:
            raise ConfigError(f"dilation must be >= 1, got {self.dilation}")
        if self.padding not in PADDINGS:
            raise ConfigError(f"padding must be one of {PADDINGS}, got {self.padding!r}")

    @property
    def kernel_size(self) -> int:
        return self.weight.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weight.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weight.shape[2]

    @property
    def n_params(self) -> int:
        return self.weight.size + self.bias.size

    def pad_amounts(self) -> tuple[int, int]:
        total = (self.kernel_size - 1) * self.dilation
        if self.padding == "causal":
            return total, 0
        left = total // 2
        return left, total - left

    @classmethod
    def create(cls, kernel_size: int, in_channels: int, out_channels: int, dilation: int = 1,
               padding: str = "causal", rng=None, init: str = "glorot", name: str = "conv") -> "Conv1dParams":
        if kernel_size < 1:
            raise ConfigError(f"kernel_size must be >= 1, got {kernel_size}")
        shape = (kernel_size, in_channels, out_channels)
        if init == "zeros":
            w = np.zeros(shape)
        elif init in ("glorot", "he"):
            if not isinstance(rng, np.random.Generator):
                rng = np.random.default_rng(rng)
            fan_in, fan_out = kernel_size * in_channels, kernel_size * out_channels
            bound = np.sqrt(6.0 / (fan_in + fan_out)) if init == "glorot" else np.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=shape)
        else:
            raise ConfigError(f"unknown init {init!r}")
        return cls(Tensor(w, requires_grad=True, name=f"{name}.weight"),
                   Tensor(np.zeros(out_channels), requires_grad=True, name=f"{name}.bias"),
                   dilation, padding)


def conv1d(x: Tensor, params: Conv1dParams) -> Tensor:
    """Length-preserving convolution of ``x`` ([T, C_in] or [B, T, C_in]).

    Tap ``j`` reads ``x[t + j*q - left]`` where ``left`` is the left padding:
    ``(k-1)*q`` for causal (so the last tap is the current step) and half of
    that for same padding.
    """
    xb, squeeze = _as_batched(x.data, "conv1d")
    B, T, C = xb.shape
    if C != params.in_channels:
        raise ShapeError("conv1d input channels do not match weight", x.shape, params.weight.shape)
    k, q = params.kernel_size, params.dilation
    left, right = params.pad_amounts()
    xp = np.pad(xb, ((0, 0), (left, right), (0, 0))) if left or right else xb
    if k == 1:
        cols = xp
    else:
        cols = np.concatenate([xp[:, j * q:j * q + T, :] for j in range(k)], axis=2)
    w_flat = params.weight.data.reshape(k * C, params.out_channels)
    out = cols @ w_flat + params.bias.data

    def grad_fn(g):
        gb = g[None] if squeeze else g
        g2 = gb.reshape(-1, params.out_channels)
        gw = (cols.reshape(-1, k * C).T @ g2).reshape(params.weight.shape)
        gbias = g2.sum(axis=0)
        gcols = gb @ w_flat.T
        if k == 1 and not (left or right):
            gx = gcols
        else:
            gxp = np.zeros((B, T + left + right, C))
            for j in range(k):
                gxp[:, j * q:j * q + T, :] += gcols[:, :, j * C:(j + 1) * C]
            gx = gxp[:, left:left + T, :]
        return (gx[0] if squeeze else gx, gw, gbias)

    return _result(out[0] if squeeze else out, (x, params.weight, params.bias), grad_fn, "conv1d")

