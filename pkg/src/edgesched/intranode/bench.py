"""Random small instances and the solver-versus-oracle gap benchmark."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ..core import GpuConfig, ModelVariant, NodeConfig, SolverConfig, planted_catalog, rng_stream
from .latency import LatencyModel
from .oracle import brute_force_oracle
from .plan import NodePlan, check_plan_feasibility
from .solver import solve_intranode


@dataclass
class Instance:
    node: NodeConfig
    catalog: tuple[ModelVariant, ...]
    latency: dict[int, LatencyModel]
    q_n: int
    slo: float
    prev: NodePlan | None


def random_instance(rng: np.random.Generator, cfg: SolverConfig | None = None) -> Instance:
    """A 1-2 GPU node with 2-3 perturbed planted models and, half the time, a previous plan."""
    cfg = cfg or SolverConfig()
    base = planted_catalog(1)
    n_models = int(rng.integers(2, 4))
    picked = sorted(rng.choice(len(base), size=n_models, replace=False))
    catalog = []
    for new_id, i in enumerate(picked):
        m = base[i]
        jitter = np.exp(rng.normal(0.0, 0.15, size=5))
        params = tuple(float(p * j) for p, j in zip(m.latency_params, jitter))
        catalog.append(ModelVariant(new_id, m.name, float(m.load_time_s * rng.uniform(0.5, 1.5)), m.min_mem_frac,
                                    params, m.delta_t_s, (float(np.clip(m.quality_by_node[0] + rng.normal(0, 0.05), 0, 1)),),
                                    m.size_class))
    catalog = tuple(catalog)
    node = NodeConfig(0, tuple(GpuConfig() for _ in range(int(rng.integers(1, 3)))),
                      tuple(range(n_models)), float(rng.uniform(0.1, 1.0)), (1.0,))
    latency = {m.id: LatencyModel.quadratic(*m.latency_params, delta_t_s=m.delta_t_s, model_id=m.id) for m in catalog}
    q_n = int(rng.integers(20, 600))
    slo = float(rng.uniform(2.0, 25.0))
    prev = None
    if rng.random() < 0.5:
        prev = solve_intranode(node, int(rng.integers(20, 600)), float(rng.uniform(2.0, 25.0)), None, cfg,
                               catalog, latency)
    return Instance(node, catalog, latency, q_n, slo, prev)


@dataclass
class GapReport:
    instances: int
    max_gap: float
    mean_gap: float
    infeasible_solver: int
    infeasible_oracle: int
    mean_solve_ms: float
    gaps: list[float]

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if k != "gaps"}


def relative_gap(solver_obj: float, oracle_obj: float) -> float:
    """Shortfall of the solver relative to the oracle; negative when the solver is better."""
    if oracle_obj <= 0:
        return 0.0 if solver_obj >= oracle_obj - 1e-12 else float("inf")
    return (oracle_obj - solver_obj) / abs(oracle_obj)


def bench_optimizer(instances: int, seed: int, cfg: SolverConfig | None = None) -> GapReport:
    cfg = cfg or SolverConfig()
    rng = rng_stream(seed, "bench-optimizer")
    gaps, times = [], []
    bad_s = bad_o = 0
    for _ in range(instances):
        inst = random_instance(rng, cfg)
        t0 = time.perf_counter()
        sp = solve_intranode(inst.node, inst.q_n, inst.slo, inst.prev, cfg, inst.catalog, inst.latency)
        times.append(time.perf_counter() - t0)
        op = brute_force_oracle(inst.node, inst.q_n, inst.slo, inst.prev, inst.catalog, inst.latency,
                                cfg.grid_coarse, cfg.eps1, cfg.max_models_per_gpu)
        bad_s += bool(check_plan_feasibility(sp, inst.node, inst.slo, inst.catalog, inst.latency))
        bad_o += bool(check_plan_feasibility(op, inst.node, inst.slo, inst.catalog, inst.latency))
        gaps.append(relative_gap(sp.objective, op.objective))
    return GapReport(
        instances=instances,
        max_gap=max(gaps) if gaps else 0.0,
        mean_gap=float(np.mean(gaps)) if gaps else 0.0,
        infeasible_solver=bad_s,
        infeasible_oracle=bad_o,
        mean_solve_ms=1000 * float(np.mean(times)) if times else 0.0,
        gaps=gaps,
    )
