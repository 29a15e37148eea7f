# ### Per-node deployment and split
#
# Given the queries routed to a node and the slot's latency budget, the solver
# picks which variants to load on each GPU, their memory shares and the split
# of queries. A tight budget favours the small model; a loose one the large.

from edgesched.baseline_policies import DEPLOYMENTS, StaticDeployment, static_plan
from edgesched.core import GpuConfig, NodeConfig, SolverConfig, planted_catalog
from edgesched.intranode import LatencyModel, brute_force_oracle, check_plan_feasibility, solve_intranode

catalog = planted_catalog(1)
latency = {m.id: LatencyModel.quadratic(*m.latency_params, delta_t_s=m.delta_t_s) for m in catalog}
node = NodeConfig(0, (GpuConfig(), GpuConfig()), (0, 1, 2), 0.5, (1.0,))
cfg = SolverConfig()


def describe(plan):
    parts = []
    for g in plan.gpus:
        for a in g.deployed():
            parts.append(f"gpu{g.gpu}:{catalog[a.model].name}(R={a.R:.2f}, x={a.queries})")
    return ", ".join(parts) or "nothing deployed"


for slo in (5.0, 10.0, 15.0):
    plan = solve_intranode(node, 100, slo, None, cfg, catalog, latency)
    oracle = brute_force_oracle(node, 100, slo, None, catalog, latency)
    print(f"L={slo:>4}: {describe(plan)}  dropped={plan.dropped}  objective={plan.objective:.3f} "
          f"(grid search {oracle.objective:.3f})")
    assert not check_plan_feasibility(plan, node, slo, catalog, latency)

# Carrying the plan into the next slot: resizing or loading a model costs its
# load time on that GPU, which eats into the next slot's budget.

prev = solve_intranode(node, 100, 15.0, None, cfg, catalog, latency)
nxt = solve_intranode(node, 100, 5.0, prev, cfg, catalog, latency)
print("after a budget drop:", describe(nxt), f"loading={nxt.total_loading_s():.1f}s")

print("\nstatic deployments at L=10:")
for name in DEPLOYMENTS:
    p = static_plan(StaticDeployment(name), node, 100, 10.0, None, catalog, latency)
    print(f"  {name:<12} objective {p.objective:.3f}  dropped {p.dropped}")
