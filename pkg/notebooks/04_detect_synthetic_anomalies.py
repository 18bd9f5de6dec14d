# %% [markdown]
# End to end on the labelled benchmark: 200 normal usages for training,
# 50 test usages carrying 20 injected anomalies.  Runs in about a minute.

# %%
import numpy as np

from smarthome_ad import anomaly, models, preprocess as pp, synth

bm = synth.build_benchmark(seed=0)
print([(lab.kind, lab.start) for lab in bm.labels[:4]])

_, clean_segs = pp.preprocess_series(bm.clean)
train_segs = [s for s in clean_segs if s.start_timestamp < bm.split_timestamp]
norm = pp.fit_norm_max(train_segs)
X = models.stack_signals([pp.to_usage_signal(s, 320, norm) for s in train_segs])

model = models.build_model("tcn", seed=0)
losses, initial = models.fit(model, X, models.RunConfig(epochs=60, learning_rate=2e-3))
print(f"train MSE {initial:.3f} -> {losses[-1]:.5f}")

# %%
regular, segs = pp.preprocess_series(bm.series)
test_segs = [s for s in segs if s.start_timestamp >= bm.split_timestamp]
report = anomaly.detect(regular, model, norm, segments=test_segs)
print(report.summary())
print(anomaly.event_scores(report.events, bm.labels))

# %%
with open("detections.svg", "w") as fh:
    anomaly.plot_report(report, fh)
