import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smarthome_ad import models, preprocess as pp, synth
from smarthome_ad.errors import ConfigError, DataError, NumericError, ShapeError
from smarthome_ad.models import (CnnAeConfig, RunConfig, TcnAeConfig, build_model, expected_param_count, fit,
                                 load_model, save_model, stack_signals, train)

SMALL_TCN = TcnAeConfig(input_length=32, dilations=(1, 2), n_filters=4, bottleneck_filters=2, pool_s=4)
SMALL_CNN = CnnAeConfig(input_length=32, encoder_filters=(4, 3, 2), kernel_size=3)


def pulses(n, L=32, seed=0):
    rng = np.random.default_rng(seed)
    X = np.zeros((n, L))
    for i in range(n):
        a = rng.integers(2, 6)
        X[i, a:a + 12] = 0.8 + 0.05 * rng.standard_normal()
    return X


@pytest.mark.parametrize("kind", ["cnn", "tcn"])
def test_default_shapes(kind, rng):
    model = build_model(kind)
    x = rng.uniform(0, 1, (2, 320, 1))
    assert model.forward(x).shape == (2, 320, 1)
    assert model.forward(x[0]).shape == (320, 1)


def test_tcn_latent_length():
    model = build_model("tcn")
    assert model.encode(np.zeros((320, 1))).shape == (80, 8)


def test_cnn_latent_length():
    assert build_model("cnn").encode(np.zeros((320, 1))).shape == (40, 8)


@settings(max_examples=15, deadline=None)
@given(s=st.sampled_from([1, 2, 4, 8]), groups=st.integers(1, 4), f=st.integers(1, 5), b=st.integers(1, 4),
       d=st.integers(1, 2), residual=st.booleans())
def test_tcn_shapes_and_counts_property(s, groups, f, b, d, residual):
    cfg = TcnAeConfig(input_length=s * groups, channels=d, dilations=(1, 2), n_filters=f,
                      bottleneck_filters=b, pool_s=s, residual=residual)
    model = build_model("tcn", cfg)
    x = np.random.default_rng(0).uniform(0, 1, (s * groups, d))
    assert model.encode(x).shape == (groups, b)
    assert model.forward(x).shape == x.shape
    assert model.n_params == expected_param_count("tcn", cfg)


@settings(max_examples=15, deadline=None)
@given(widths=st.tuples(*[st.integers(1, 6)] * 3), k=st.integers(1, 5), s=st.integers(1, 3), d=st.integers(1, 2))
def test_cnn_shapes_and_counts_property(widths, k, s, d):
    cfg = CnnAeConfig(input_length=2 * s ** 3, channels=d, encoder_filters=widths, kernel_size=k, pool_s=s)
    model = build_model("cnn", cfg)
    x = np.random.default_rng(0).uniform(0, 1, (cfg.input_length, d))
    assert model.forward(x).shape == x.shape
    assert model.n_params == expected_param_count("cnn", cfg)


def test_param_count_hand_formula():
    # k*C_in*C_out + C_out per layer, written out for the default CNN-AE
    enc = (7 * 1 * 32 + 32) + (7 * 32 * 16 + 16) + (7 * 16 * 8 + 8)
    assert build_model("cnn").n_params == enc + (7 * 8 * 16 + 16) + (7 * 16 * 32 + 32) + (7 * 32 * 1 + 1)
    # default TCN-AE: 5 levels, 16 filters, k=3, skip convs where widths change
    enc = (3 * 1 * 16 + 16) + (3 * 16 * 16 + 16) + (1 * 16 + 16) + 4 * 2 * (3 * 16 * 16 + 16)
    dec = (3 * 8 * 16 + 16) + (3 * 16 * 16 + 16) + (8 * 16 + 16) + 4 * 2 * (3 * 16 * 16 + 16)
    assert build_model("tcn").n_params == enc + (16 * 8 + 8) + dec + (16 * 1 + 1)


@pytest.mark.parametrize("kind", ["cnn", "tcn"])
def test_zero_init_gives_zero_output(kind):
    model = build_model(kind, init="zeros")
    assert not model.forward(np.zeros((320, 1))).data.any()


@pytest.mark.parametrize("kind,cfg", [("cnn", SMALL_CNN), ("tcn", SMALL_TCN)])
def test_eval_forward_is_pure(kind, cfg, rng):
    model = build_model(kind, cfg, seed=3)
    x = rng.uniform(0, 1, (3, 32, 1))
    np.testing.assert_array_equal(model.forward(x).data, model.forward(x).data)
    np.testing.assert_array_equal(build_model(kind, cfg, seed=3).forward(x).data, model.forward(x).data)


def test_encoder_decoder_parameters_disjoint():
    model = build_model("tcn")
    enc = {id(p) for lv in model.encoder_tcn for c in lv.values() if c for p in (c.weight, c.bias)}
    dec = {id(p) for lv in model.decoder_tcn for c in lv.values() if c for p in (c.weight, c.bias)}
    assert enc and dec and not enc & dec


def test_wrong_input_shape():
    with pytest.raises(ShapeError):
        build_model("tcn").forward(np.zeros((100, 1)))


def test_config_validation():
    with pytest.raises(ConfigError):
        TcnAeConfig(input_length=322, pool_s=4)
    with pytest.raises(ConfigError):
        TcnAeConfig(dilations=(1, 4, 2))
    with pytest.raises(ConfigError):
        CnnAeConfig(encoder_filters=(8, 4))
    with pytest.raises(ConfigError):
        build_model("rnn")


@pytest.mark.parametrize("kind,cfg", [("cnn", SMALL_CNN), ("tcn", SMALL_TCN)])
def test_training_reduces_reconstruction_error(kind, cfg):
    X = pulses(40)[..., None]
    model = build_model(kind, cfg, seed=0)
    losses, initial = fit(model, X, RunConfig(epochs=25, learning_rate=5e-3))
    assert models.reconstruction_mse(model, X) < initial
    assert len(losses) == 25


def test_train_split_and_determinism():
    data = [pp.to_usage_signal(x, 32) for x in pulses(10)]
    a = train("tcn", data, "8:2", RunConfig(epochs=2), SMALL_TCN)
    b = train("tcn", data, "8:2", RunConfig(epochs=2), SMALL_TCN)
    assert (a.n_train, a.n_test) == (8, 2)
    assert a.loss_log() == b.loss_log()
    assert a.final_params == b.final_params


def test_train_rejects_small_dataset():
    with pytest.raises(DataError):
        train("tcn", [pp.to_usage_signal(x, 32) for x in pulses(9)], "8:2", RunConfig(epochs=1), SMALL_TCN)


def test_nan_loss_reports_diagnostics():
    X = pulses(8)[..., None]
    model = build_model("tcn", SMALL_TCN)
    with pytest.raises(NumericError) as err:
        fit(model, X, RunConfig(epochs=3, learning_rate=1e200))
    assert {"lr", "epoch", "batch"} <= set(err.value.diagnostics)


def test_save_load_roundtrip(rng):
    model = build_model("cnn", SMALL_CNN, seed=5)
    buf = io.BytesIO()
    sidecar = save_model(model, buf, norm_max=2100.0)
    loaded, norm = load_model(io.BytesIO(buf.getvalue()), sidecar)
    x = rng.uniform(0, 1, (32, 1))
    assert norm == 2100.0
    np.testing.assert_array_equal(loaded.forward(x).data, model.forward(x).data)


@pytest.mark.slow
def test_dishwasher_training_oracle():
    # threshold 0.25x initial; pilot runs reach about 6e-4x at 30 epochs
    bm = synth.build_benchmark(n_anomalies=0)
    _, segs = pp.preprocess_series(bm.clean)
    segs = [s for s in segs if s.start_timestamp < bm.split_timestamp]
    assert len(segs) == 200
    norm = pp.fit_norm_max(segs)
    X = stack_signals([pp.to_usage_signal(s, 320, norm) for s in segs])
    losses, initial = fit(build_model("tcn"), X, RunConfig(epochs=30))
    assert losses[-1] < 0.25 * initial
