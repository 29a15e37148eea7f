# ### Latency surfaces
#
# Each model variant's processing time for a slot depends on how many queries
# it serves (q) and the share of GPU memory it holds (R). Here we sample a
# planted surface with 5% noise, fit four candidate families and compare RMSE.
#
#     python demos/01_latency_families.py

import numpy as np

from edgesched.core import planted_catalog, rng_stream
from edgesched.intranode import FAMILIES, LatencyModel, fit_latency, predict_latency, servable_range, synth_latency_samples

catalog = planted_catalog(1)

print(f"{'model':<8} " + " ".join(f"{f:>12}" for f in FAMILIES))
for m in catalog:
    truth = LatencyModel.quadratic(*m.latency_params)
    samples = synth_latency_samples(truth, rng_stream(0, f"demo/{m.id}"), n=60, noise=0.05, r_min=m.min_mem_frac)
    fits = {f: fit_latency(samples, f) for f in FAMILIES}
    print(f"{m.name:<8} " + " ".join(f"{fits[f].fit_rmse:12.4f}" for f in FAMILIES))

# The quadratic form is convex in (q, R), so for a fixed R the counts meeting a
# budget form an interval. servable_range returns its integer ends.

large = LatencyModel.quadratic(*catalog[2].latency_params, delta_t_s=catalog[2].delta_t_s)
for budget in (5.0, 10.0, 20.0):
    lo, hi = servable_range(large, 1.0, budget)
    print(f"large model, R=1, budget {budget:>4}s -> " + (f"up to {hi} queries" if hi >= 1 else "cannot serve"))

qs = np.array([0, 50, 100, 200])
print("latency at R=0.6:", np.round(predict_latency(large, qs, np.full(4, 0.6)), 2))
