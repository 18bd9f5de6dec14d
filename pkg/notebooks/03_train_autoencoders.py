# %% [markdown]
# Train both autoencoders on clean synthetic dishwasher usages and compare
# how well they reconstruct held-out ones.

# %%
import numpy as np

from smarthome_ad import evaluation, models, preprocess as pp, synth

clean = synth.generate(synth.DISHWASHER, n_usages=60, seed=3)
_, segments = pp.preprocess_series(clean)
train_segs, test_segs = evaluation.split(segments, "8:2")
norm = pp.fit_norm_max(train_segs)
train_x = [pp.to_usage_signal(s, 320, norm) for s in train_segs]
test_x = [pp.to_usage_signal(s, 320, norm) for s in test_segs]

# %%
for kind in ("cnn", "tcn"):
    model = models.build_model(kind, seed=0)
    losses, initial = models.fit(model, models.stack_signals(train_x), models.RunConfig(epochs=15, learning_rate=2e-3))
    row = evaluation.evaluate(model, test_x, "8:2")
    print(f"{row.model_name:9s} params={model.n_params:6d} loss {initial:.4f} -> {losses[-1]:.5f} "
          f"test MAE {row.mae:.4f} MAPE {row.mape:.2f}%")

# %% [markdown]
# The TCN-AE squeezes 320 samples into an 80 x 8 latent sequence.

# %%
print(model.encode(test_x[0].samples[:, None]).shape)
