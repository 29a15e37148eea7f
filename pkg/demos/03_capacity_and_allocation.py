# ### Node capacity and the inter-node allocator
#
# Capacity is profiled by ramping load at each SLO until drops appear, then
# fitted with a straight line. The allocator samples a node per query from the
# router's probabilities and resamples when a node is full.

import numpy as np

from edgesched.core import default_config, rng_stream
from edgesched.internode import allocate, fit_capacity, integer_capacities, profile_capacity
from edgesched.simengine import capacity_probe, fit_latency_models

cfg = default_config(0)
fitted = fit_latency_models(cfg)

models = []
for node in cfg.nodes:
    pts = profile_capacity(capacity_probe(cfg, node, fitted), probe_step=cfg.probe_step)
    m = fit_capacity(pts, node.id)
    models.append(m)
    print(f"node {node.id} ({len(node.gpus)} GPU): C(L) = {m.k_n:.2f} L + {m.b_n:.1f}   rmse {m.rmse:.1f}")

caps = integer_capacities(models, 10.0)
print("capacities at L=10:", caps)

# A batch that prefers node 0 heavily. Without the capacity check node 0 takes
# almost everything; with it the overflow is moved to nodes with room.
rng = rng_stream(0, "demo")
probs = rng.dirichlet([8, 1, 1, 1], size=500)
for check in (False, True):
    r = allocate(500, probs, caps, rng_stream(1, "alloc"), capacity_check=check)
    print(f"capacity check {'on ' if check else 'off'}: counts {r.counts}, reassigned {r.reassigned}")

over = allocate(int(caps.sum() * 1.5), rng.dirichlet(np.ones(4), size=int(caps.sum() * 1.5)), caps,
                rng_stream(2, "alloc"))
print("oversubscribed: scaled =", over.scaled, "adjusted C =", np.round(over.adjusted_capacities, 1))
