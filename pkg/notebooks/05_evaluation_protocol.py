# %% [markdown]
# MAE / MAPE at the three division ratios for both models.  With REFIT data,
# replace the synthetic series by
# ``ingest.parse_refit_csv("CLEAN_House1.csv", "Appliance6")``.

# %%
from smarthome_ad import evaluation, models, preprocess as pp, synth

series = synth.generate(synth.DISHWASHER, n_usages=60, seed=5)
_, segments = pp.preprocess_series(series)
rows = evaluation.run_protocol(segments, run_cfg=models.RunConfig(epochs=10, learning_rate=2e-3))
print(evaluation.format_table(rows, "dishwasher"))

# %%
print(evaluation.mape([5.0, 90.0], [0.0, 100.0]))   # zero actuals are excluded, not divided by
