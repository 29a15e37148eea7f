"""Node plans (deployment, memory, query split) and their feasibility audit."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from ..core import ModelVariant, NodeConfig
from .latency import FEAS_TOL, LatencyModel, predict_latency
from .states import transition_flags

MEM_TOL = 1e-9


@dataclass
class ModelAssignment:
    model: int
    d: int = 0
    R: float = 0.0
    queries: int = 0
    uld: int = 0
    ld: int = 0
    rc: int = 0
    rld: int = 0
    latency_s: float = 0.0


@dataclass
class GpuPlanState:
    gpu: int
    models: dict[int, ModelAssignment]
    loading_time_s: float = 0.0

    def deployed(self) -> list[ModelAssignment]:
        return [a for a in self.models.values() if a.d == 1]


@dataclass
class NodePlan:
    node: int
    q_assigned: int
    gpus: list[GpuPlanState]
    served: int = 0
    dropped: int = 0
    predicted_completion_s: float = 0.0
    objective: float = 0.0
    slo_s: float = 0.0
    meta: dict = field(default_factory=dict)

    def get(self, gpu: int, model: int) -> ModelAssignment:
        if gpu < len(self.gpus) and model in self.gpus[gpu].models:
            return self.gpus[gpu].models[model]
        return ModelAssignment(model)

    def state(self, gpu: int) -> dict[int, tuple[int, float]]:
        return {m: (a.d, a.R) for m, a in self.gpus[gpu].models.items()}

    def splits(self) -> dict[tuple[int, int], int]:
        return {(g.gpu, m): a.queries for g in self.gpus for m, a in g.models.items() if a.queries > 0}

    def total_loading_s(self) -> float:
        return sum(g.loading_time_s for g in self.gpus)

    def to_record(self) -> dict:
        q = max(self.q_assigned, 1)
        return {
            "node": self.node,
            "q_assigned": self.q_assigned,
            "served": self.served,
            "dropped": self.dropped,
            "objective": self.objective,
            "predicted_completion_s": self.predicted_completion_s,
            "gpus": [
                {
                    "gpu": g.gpu,
                    "loading_time_s": g.loading_time_s,
                    "models": [
                        {"model": a.model, "d": a.d, "R": a.R, "queries": a.queries,
                         "phi": a.queries / q, "ld": a.ld, "uld": a.uld, "rld": a.rld}
                        for a in g.models.values()
                    ],
                }
                for g in self.gpus
            ],
        }


def empty_plan(node: NodeConfig) -> NodePlan:
    gpus = [GpuPlanState(k, {m: ModelAssignment(m) for m in node.model_pool}) for k in range(len(node.gpus))]
    return NodePlan(node.id, 0, gpus)


def build_plan(
    node: NodeConfig,
    q_n: int,
    slo: float,
    prev: NodePlan | None,
    choice: Sequence[Mapping[int, tuple[float, int]]],
    catalog: Sequence[ModelVariant],
    latency: Mapping[int, LatencyModel],
    eps1: float,
    charge_loading: bool = True,
) -> NodePlan:
    """Materialise a plan from per-GPU ``{model: (R, queries)}`` choices for deployed models."""
    prev = prev or empty_plan(node)
    gpus = []
    worst = 0.0
    served = 0
    value = 0.0
    for k in range(len(node.gpus)):
        models = {}
        tl = 0.0
        for m in node.model_pool:
            R, x = choice[k].get(m, (0.0, 0))
            d = 1 if m in choice[k] else 0
            pa = prev.get(k, m)
            f = transition_flags(pa.d, d, pa.R, R, eps1)
            if charge_loading:
                tl += (f["ld"] + f["rld"]) * catalog[m].load_time_s
            models[m] = ModelAssignment(m, d, float(R) if d else 0.0, int(x), **f)
        for a in models.values():
            if a.queries > 0:
                a.latency_s = predict_latency(latency[a.model], a.queries, a.R)
                worst = max(worst, a.latency_s + tl + node.vector_search_time_s)
                served += a.queries
                value += a.queries * catalog[a.model].quality_by_node[node.id]
        gpus.append(GpuPlanState(k, models, tl))
    return NodePlan(
        node=node.id,
        q_assigned=int(q_n),
        gpus=gpus,
        served=served,
        dropped=int(q_n) - served,
        predicted_completion_s=worst,
        objective=value / q_n if q_n > 0 else 0.0,
        slo_s=slo,
    )


def check_plan_feasibility(
    plan: NodePlan,
    node: NodeConfig,
    slo: float,
    catalog: Sequence[ModelVariant],
    latency: Mapping[int, LatencyModel],
) -> list[str]:
    """Audit memory, deployment, latency and split-conservation constraints; empty when feasible."""
    out = []
    budget = slo - node.vector_search_time_s
    split_total = 0
    for g in plan.gpus:
        cap = node.gpus[g.gpu].mem_frac_capacity
        total_r = sum(a.R for a in g.models.values())
        if total_r > cap + MEM_TOL:
            out.append(f"memory_capacity: gpu {g.gpu} uses {total_r:.4f} > {cap}")
        for a in g.models.values():
            r_m = catalog[a.model].min_mem_frac
            if a.R < a.d * r_m - MEM_TOL:
                out.append(f"min_memory: gpu {g.gpu} model {a.model} R={a.R:.4f} < {r_m}")
            if a.R > a.d + MEM_TOL:
                out.append(f"undeployed_memory: gpu {g.gpu} model {a.model} d={a.d} R={a.R:.4f}")
            if a.queries < 0:
                out.append(f"split: gpu {g.gpu} model {a.model} negative query count")
            if a.queries > 0:
                if a.d == 0:
                    out.append(f"split: gpu {g.gpu} model {a.model} serves queries while undeployed")
                    continue
                lat = predict_latency(latency[a.model], a.queries, a.R)
                if lat + g.loading_time_s > budget + FEAS_TOL:
                    out.append(
                        f"latency: gpu {g.gpu} model {a.model} {lat:.4f}+{g.loading_time_s:.4f}s "
                        f"exceeds budget {budget:.4f}s"
                    )
            split_total += a.queries
    if split_total != plan.served:
        out.append(f"split: model splits sum to {split_total}, served {plan.served}")
    if plan.served + plan.dropped != plan.q_assigned:
        out.append(f"split: served {plan.served} + dropped {plan.dropped} != assigned {plan.q_assigned}")
    if plan.served < 0 or plan.dropped < 0:
        out.append("split: negative served/dropped count")
    return out
