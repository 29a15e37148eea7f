# ### Closed loop on the planted cluster
#
# Four nodes, six topic domains, 500 queries per slot. Each slot routes the
# batch, allocates it under capacity limits, plans every node, simulates
# execution and feeds answer quality back to the router. A short run; the
# acceptance suite uses 200 slots.

from edgesched.core import default_config
from edgesched.simengine import init_state, run_experiment

cfg = default_config(0).with_overrides(slots=40)
base = init_state(cfg, "random")
shared = dict(fitted=base.fitted, capacities=base.capacities, prototypes=base.prototypes)

for router in ("random", "linucb", "ppo", "oracle"):
    st = init_state(cfg, router, True, **shared)
    res = run_experiment(cfg, router, state=st)
    s = res.summary
    print(f"{router:<7} quality {s['mean_quality']:.3f}  last decile {s['last_decile_quality']:.3f}  "
          f"drop {s['mean_drop_rate']:.3%}")

# Inter-node ablation under heavy skew and a tight SLO: switching the capacity
# check off sends overflow to nodes that cannot serve it in time.
skew = cfg.with_overrides(dirichlet_alpha=0.1, slot_latency_slo_s=5.0, slots=15)
for on in (True, False):
    st = init_state(skew, "random", on, **shared)
    s = run_experiment(skew, "random", on, state=st).summary
    print(f"inter-node {'on ' if on else 'off'}: drop {s['mean_drop_rate']:.3f}  "
          f"effective quality {s['mean_effective_quality']:.3f}")
