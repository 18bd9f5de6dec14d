# %% [markdown]
# From raw appliance readings to fixed-length usage signals.
#
# A synthetic dishwasher stands in for a REFIT house file here; the same
# calls accept a real CLEAN_House*.csv path plus the appliance column name.

# %%
import io

import numpy as np

from smarthome_ad import ingest, preprocess as pp, synth

raw = synth.generate(synth.DISHWASHER, n_usages=5, seed=1)
buf = io.StringIO()
ingest.write_refit_csv(raw, buf)
series = ingest.parse_refit_csv(buf.getvalue().encode(), "Dishwasher")
print(ingest.series_stats(series))

# %% [markdown]
# Knock out some readings to see the gap rule at work: runs of up to
# floor(4 * mean_interval / r) empty buckets are forward-filled, longer
# runs become zeros.

# %%
keep = np.ones(len(series), dtype=bool)
keep[200:203] = False     # a short hole
keep[400:460] = False     # a long one
holey = ingest.ApplianceSeries(1, "Dishwasher", series.timestamps[keep], series.watts[keep])
cfg = pp.ResampleConfig.for_series(holey, r=10)
regular = pp.resample(holey, cfg)
print("gap fill limit:", pp.gap_fill_limit(cfg), "buckets")
for flag in pp.FillFlag:
    print(pp.FLAG_NAMES[flag], int((regular.filled_mask == flag).sum()))

# %%
segments = pp.segment_usages(regular)
for seg in segments:
    print(seg.start_timestamp, len(seg), "buckets", "truncated" if seg.truncated else "")

norm = pp.fit_norm_max(segments)
signals = [pp.to_usage_signal(s, L=320, norm_max=norm) for s in segments]
print(signals[0].samples[:12].round(3), signals[0].n_valid)
