"""Exhaustive grid search over deployments, memory fractions and split fractions.

Used only to check the solver on small instances.
"""

from __future__ import annotations

import itertools
from typing import Mapping, Sequence

import numpy as np

from ..core import ModelVariant, NodeConfig
from .latency import FEAS_TOL, LatencyModel, predict_latency
from .plan import NodePlan, build_plan, empty_plan
from .states import loading_time


class InstanceTooLarge(ValueError):
    pass


def brute_force_oracle(
    node: NodeConfig,
    q_n: int,
    slo: float,
    prev_plan: NodePlan | None,
    catalog: Sequence[ModelVariant],
    latency: Mapping[int, LatencyModel],
    grid: float = 0.05,
    eps1: float = 0.01,
    max_models_per_gpu: int = 3,
) -> NodePlan:
    if len(node.gpus) > 2 or len(node.model_pool) > 3:
        raise InstanceTooLarge("brute_force_oracle handles at most 2 GPUs and 3 pool models")
    pool = list(node.model_pool)
    prev = prev_plan or empty_plan(node)
    units = int(round(1 / grid))
    counts = np.floor(np.arange(units + 1) * q_n / units + 1e-9).astype(int)
    budget0 = slo - node.vector_search_time_s
    uu, aa = np.meshgrid(np.arange(units + 1), np.arange(units + 1), indexing="ij")
    valid = aa <= uu
    diff = np.where(valid, uu - aa, 0)

    per_gpu = []
    for k in range(len(node.gpus)):
        prev_state = prev.state(k)
        best = np.full(units + 1, -np.inf)
        arg: list = [None] * (units + 1)
        for size in range(0, min(max_models_per_gpu, len(pool)) + 1):
            for sub in itertools.combinations(pool, size):
                grids = []
                for m in sub:
                    r_m = catalog[m].min_mem_frac
                    g = list(np.round(r_m + grid * np.arange(int(np.floor((1 - r_m) / grid + 1e-9)) + 1), 10))
                    d0, r0 = prev_state.get(m, (0, 0.0))
                    if d0 and r0 not in g:
                        g.append(r0)
                    grids.append(g)
                for Rs in itertools.product(*grids):
                    if sum(Rs) > 1 + 1e-9:
                        continue
                    cur = {m: (1, R) for m, R in zip(sub, Rs)}
                    tl = loading_time(prev_state, cur, {m: catalog[m].load_time_s for m in pool}, eps1)
                    budget = budget0 - tl
                    # W[u]: best value using u split units on this GPU; split[u]: per-model units
                    W = np.full(units + 1, -np.inf)
                    W[0] = 0.0
                    splits = [()] * (units + 1)
                    for m, R in zip(sub, Rs):
                        v = np.full(units + 1, -np.inf)
                        v[0] = 0.0
                        if budget > 0:
                            lat = np.asarray(predict_latency(latency[m], counts, np.full(units + 1, R)))
                            ok = (lat <= budget + FEAS_TOL) | (counts == 0)
                            v = np.where(ok, counts * catalog[m].quality_by_node[node.id], -np.inf)
                        else:
                            v = np.where(counts == 0, 0.0, -np.inf)
                        M = np.where(valid, W[diff] + v[None, :], -np.inf)
                        pick = np.argmax(M, axis=1)
                        newW = M[np.arange(units + 1), pick]
                        newS = [splits[u - a] + (int(a),) for u, a in enumerate(pick)]
                        W, splits = newW, newS
                    for u in range(units + 1):
                        if W[u] > best[u] + 1e-12:
                            best[u] = W[u]
                            arg[u] = (sub, Rs, splits[u])
        per_gpu.append((best, arg))

    if len(per_gpu) == 1:
        b, a = per_gpu[0]
        u = int(np.argmax(b))
        picks = [a[u]]
    else:
        (b0, a0), (b1, a1) = per_gpu
        top, picks = -np.inf, None
        for u0 in range(units + 1):
            for u1 in range(units + 1 - u0):
                val = b0[u0] + b1[u1]
                if val > top + 1e-12:
                    top, picks = val, [a0[u0], a1[u1]]
    choice = []
    for sub, Rs, sp in picks:
        choice.append({m: (float(R), int(counts[a])) for m, R, a in zip(sub, Rs, sp)})
    return build_plan(node, q_n, slo, prev_plan, choice, catalog, latency, eps1)
