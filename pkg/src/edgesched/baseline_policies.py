"""Fixed-deployment baselines: small, mid, and two mixed templates with even query splits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import ModelVariant, NodeConfig
from .intranode.latency import LatencyModel, servable_range
from .intranode.plan import NodePlan, build_plan
from .intranode.states import transition_flags

DEPLOYMENTS = ("small_param", "mid_param", "mixed1", "mixed2")


@dataclass(frozen=True)
class StaticDeployment:
    name: str

    def __post_init__(self):
        if self.name not in DEPLOYMENTS:
            raise ValueError(f"unknown static deployment {self.name!r}; choose from {DEPLOYMENTS}")

    def size_classes(self, n_gpus: int) -> list[tuple[str, ...]]:
        """Size classes hosted on each GPU."""
        if self.name == "small_param":
            return [("small",)] * n_gpus
        if self.name == "mid_param":
            return [("mid",)] * n_gpus
        if self.name == "mixed1" or n_gpus == 1:
            return [("small", "mid")] * n_gpus
        return [("small", "mid")] + [("large",)] * (n_gpus - 1)


def _by_size(node: NodeConfig, catalog: Sequence[ModelVariant]) -> dict[str, int]:
    out: dict[str, int] = {}
    for m in node.model_pool:
        out.setdefault(catalog[m].size_class, m)
    return out


def even_split(total: int, parts: int) -> list[int]:
    """Largest-remainder split of ``total`` into ``parts`` near-equal integers."""
    if parts <= 0:
        return []
    base, rem = divmod(int(total), parts)
    return [base + (i < rem) for i in range(parts)]


def template(deployment: StaticDeployment, node: NodeConfig, catalog: Sequence[ModelVariant]) -> list[dict[int, float]]:
    """Per-GPU ``{model: R}`` with memory split proportional to minimum footprints."""
    sizes = _by_size(node, catalog)
    out = []
    for classes in deployment.size_classes(len(node.gpus)):
        missing = [c for c in classes if c not in sizes]
        if missing:
            raise ValueError(f"{deployment.name}: node {node.id} pool has no {', '.join(missing)} model")
        ms = [sizes[c] for c in classes]
        r = np.array([catalog[m].min_mem_frac for m in ms])
        if r.sum() > 1 + 1e-9:
            raise ValueError(f"{deployment.name}: models {ms} do not fit on one GPU")
        out.append({m: float(x) for m, x in zip(ms, r / r.sum())})
    return out


def static_plan(
    deployment: StaticDeployment,
    node: NodeConfig,
    q_n: int,
    slo: float,
    prev_plan: NodePlan | None,
    catalog: Sequence[ModelVariant],
    latency: Mapping[int, LatencyModel],
    eps1: float = 0.01,
) -> NodePlan:
    """Apply the template; queries beyond a model's budget-feasible count are dropped."""
    tpl = template(deployment, node, catalog)
    slots = [(k, m) for k, g in enumerate(tpl) for m in g]
    shares = even_split(q_n, len(slots))
    budget0 = slo - node.vector_search_time_s
    choice: list[dict[int, tuple[float, int]]] = [dict() for _ in tpl]
    for (k, m), x in zip(slots, shares):
        tl = 0.0
        for mm, R in tpl[k].items():
            pa = prev_plan.get(k, mm) if prev_plan else None
            f = transition_flags(pa.d if pa else 0, 1, pa.R if pa else 0.0, R, eps1)
            tl += (f["ld"] + f["rld"]) * catalog[mm].load_time_s
        budget = budget0 - tl
        R = tpl[k][m]
        served = 0
        if x > 0 and budget > 0:
            lo, hi = servable_range(latency[m], R, budget)
            cap = int(hi)
            served = min(x, cap) if cap >= max(int(lo), 1) else 0
            if served < lo:
                served = 0
        choice[k][m] = (R, served)
    return build_plan(node, q_n, slo, prev_plan, choice, catalog, latency, eps1)
