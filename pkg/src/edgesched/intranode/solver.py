"""Enumerative intra-node scheduler: deployment masks x memory grid, greedy quality fill."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ..core import ModelVariant, NodeConfig, SolverConfig
from .latency import LatencyModel, servable_range
from .plan import NodePlan, build_plan, empty_plan

_TOL = 1e-9
# above this many GPU-pair candidates fall back to coordinate ascent
_PAIR_LIMIT = 400_000


@dataclass
class _Table:
    """Candidate (mask, R) configurations for one GPU, one row per candidate."""

    mask: np.ndarray  # (N,) bitmask over pool positions
    R: np.ndarray  # (N, P)
    tl: np.ndarray  # (N,)
    cap: np.ndarray  # (N, P) servable count, clipped to q
    lo: np.ndarray  # (N, P) smallest servable positive count
    nmod: np.ndarray  # (N,)

    def take(self, idx) -> "_Table":
        return _Table(self.mask[idx], self.R[idx], self.tl[idx], self.cap[idx], self.lo[idx], self.nmod[idx])

    def __len__(self):
        return len(self.mask)


@dataclass
class _Ctx:
    pool: tuple[int, ...]
    r_min: np.ndarray
    load: np.ndarray
    quality: np.ndarray
    order: np.ndarray  # pool positions by descending quality
    lms: list[LatencyModel]
    q: int
    budget0: float
    eps1: float
    charge: bool


def _grid(lo: float, step: float) -> np.ndarray:
    n = int(np.floor((1.0 - lo) / step + 1e-9))
    return np.round(lo + step * np.arange(n + 1), 10)


def _masks(ctx: _Ctx, max_models: int) -> list[int]:
    P = len(ctx.pool)
    out = [0]
    for size in range(1, min(max_models, P) + 1):
        for sub in itertools.combinations(range(P), size):
            if ctx.r_min[list(sub)].sum() <= 1.0 + _TOL:
                out.append(sum(1 << i for i in sub))
    return out


def _evaluate(ctx: _Ctx, masks: np.ndarray, R: np.ndarray, prev_d: np.ndarray, prev_R: np.ndarray) -> _Table:
    """Loading time and servable ranges for explicit (mask, R) rows."""
    P = len(ctx.pool)
    bits = (masks[:, None] >> np.arange(P)) & 1
    if ctx.charge:
        fresh = bits * (1 - prev_d)
        resized = bits * prev_d * (np.abs(R - prev_R) > ctx.eps1)
        tl = ((fresh + resized) * ctx.load).sum(axis=1)
    else:
        tl = np.zeros(len(masks))
    budget = ctx.budget0 - tl
    cap = np.zeros(R.shape, dtype=np.int64)
    lo = np.zeros(R.shape, dtype=np.int64)
    for j in range(P):
        on = bits[:, j] == 1
        if not on.any():
            continue
        l_j, h_j = servable_range(ctx.lms[j], R[on, j], budget[on])
        h_j = np.where(budget[on] > 0, h_j, -1)
        cap[on, j] = np.clip(h_j, 0, ctx.q)
        lo[on, j] = np.maximum(l_j, 1)
    return _Table(masks.astype(np.int64), R, tl, cap, lo, bits.sum(axis=1))


def _coarse_table(ctx: _Ctx, cfg: SolverConfig, prev_d: np.ndarray, prev_R: np.ndarray) -> _Table:
    P = len(ctx.pool)
    values = []
    for j in range(P):
        v = _grid(ctx.r_min[j], cfg.grid_coarse)
        if prev_d[j] and prev_R[j] >= ctx.r_min[j] - _TOL:
            v = np.unique(np.append(v, prev_R[j]))
        values.append(v)
    rows_m, rows_R = [], []
    for mask in _masks(ctx, cfg.max_models_per_gpu):
        on = [j for j in range(P) if mask >> j & 1]
        if not on:
            rows_m.append(np.zeros(1, dtype=np.int64))
            rows_R.append(np.zeros((1, P)))
            continue
        mesh = np.stack(np.meshgrid(*[values[j] for j in on], indexing="ij"), -1).reshape(-1, len(on))
        mesh = mesh[mesh.sum(axis=1) <= 1.0 + _TOL]
        block = np.zeros((len(mesh), P))
        block[:, on] = mesh
        rows_m.append(np.full(len(mesh), mask, dtype=np.int64))
        rows_R.append(block)
    return _evaluate(ctx, np.concatenate(rows_m), np.concatenate(rows_R), prev_d, prev_R)


def _fine_table(ctx: _Ctx, cfg: SolverConfig, mask: int, center: np.ndarray,
                prev_d: np.ndarray, prev_R: np.ndarray) -> _Table:
    P = len(ctx.pool)
    on = [j for j in range(P) if mask >> j & 1]
    if not on:
        return _evaluate(ctx, np.zeros(1, dtype=np.int64), np.zeros((1, P)), prev_d, prev_R)
    k = int(round(cfg.grid_coarse / cfg.grid_fine))
    steps = cfg.grid_fine * np.arange(-k, k + 1)
    values = []
    for j in on:
        v = np.clip(np.round(center[j] + steps, 10), ctx.r_min[j], 1.0)
        if prev_d[j]:
            v = np.append(v, prev_R[j])
        values.append(np.unique(v))
    mesh = np.stack(np.meshgrid(*values, indexing="ij"), -1).reshape(-1, len(on))
    mesh = mesh[mesh.sum(axis=1) <= 1.0 + _TOL]
    R = np.zeros((len(mesh), P))
    R[:, on] = mesh
    return _evaluate(ctx, np.full(len(mesh), mask, dtype=np.int64), R, prev_d, prev_R)


def _dedupe(t: _Table) -> _Table:
    """Keep one row per distinct capacity vector: least loading, fewest models, lowest mask, most memory."""
    if len(t) <= 1:
        return t
    keys = (-t.R.sum(axis=1), t.mask, t.nmod, t.tl) + tuple(t.cap[:, j] for j in range(t.cap.shape[1]))
    order = np.lexsort(keys)
    cap_sorted = t.cap[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = np.any(cap_sorted[1:] != cap_sorted[:-1], axis=1)
    return t.take(order[first])


def _fill_value(ctx: _Ctx, total_cap: np.ndarray) -> np.ndarray:
    """Objective of the descending-quality greedy fill for each row of total capacities."""
    remaining = np.full(total_cap.shape[0], ctx.q, dtype=np.int64)
    value = np.zeros(total_cap.shape[0])
    for j in ctx.order:
        x = np.minimum(total_cap[:, j], remaining)
        remaining -= x
        value += x * ctx.quality[j]
    return value / ctx.q if ctx.q > 0 else value


def _best(obj, tl, nmod, mask_key, mem) -> int:
    return int(np.lexsort((-mem, mask_key, nmod, tl, -np.round(obj, 9)))[0])


def _select_pair(ctx: _Ctx, t0: _Table, t1: _Table) -> tuple[int, int]:
    n0, n1 = len(t0), len(t1)
    i0 = np.repeat(np.arange(n0), n1)
    i1 = np.tile(np.arange(n1), n0)
    obj = _fill_value(ctx, t0.cap[i0] + t1.cap[i1])
    P = len(ctx.pool)
    b = _best(obj, t0.tl[i0] + t1.tl[i1], t0.nmod[i0] + t1.nmod[i1],
              (t0.mask[i0] << P) + t1.mask[i1], t0.R[i0].sum(1) + t1.R[i1].sum(1))
    return int(i0[b]), int(i1[b])


def _select_given(ctx: _Ctx, t: _Table, others_cap: np.ndarray, others_tl: float, others_n: int) -> int:
    obj = _fill_value(ctx, t.cap + others_cap)
    return _best(obj, t.tl + others_tl, t.nmod + others_n, t.mask, t.R.sum(1))


def _row_obj(ctx: _Ctx, rows: list[_Table]) -> float:
    return float(_fill_value(ctx, sum(r.cap for r in rows))[0])


def _coordinate_ascent(ctx: _Ctx, tables: list[_Table], chosen: list[_Table], rounds: int) -> list[_Table]:
    K = len(tables)
    for _ in range(rounds):
        changed = False
        for k in range(K):
            rest = [chosen[i] for i in range(K) if i != k]
            others_cap = sum((r.cap for r in rest), np.zeros((1, len(ctx.pool)), dtype=np.int64))
            b = _select_given(ctx, tables[k], others_cap, sum(float(r.tl[0]) for r in rest),
                              sum(int(r.nmod[0]) for r in rest))
            row = tables[k].take([b])
            if not (np.array_equal(row.R, chosen[k].R) and row.mask[0] == chosen[k].mask[0]):
                before = _row_obj(ctx, chosen)
                trial = chosen[:k] + [row] + chosen[k + 1:]
                if _row_obj(ctx, trial) >= before - _TOL:
                    chosen = trial
                    changed = True
        if not changed:
            break
    return chosen


def solve_intranode(
    node: NodeConfig,
    q_n: int,
    slo: float,
    prev_plan: NodePlan | None,
    cfg: SolverConfig,
    catalog: Sequence[ModelVariant],
    latency: Mapping[int, LatencyModel],
    *,
    charge_loading: bool = True,
) -> NodePlan:
    """Choose deployments, memory fractions and query splits for one node and slot.

    Maximises the served quality ``sum x_m * Q_m / q_n`` subject to every active
    model finishing within ``slo - TS_n`` after its GPU's loading time.
    ``charge_loading=False`` ignores loading time (steady-state capacity probing).
    """
    if not node.model_pool:
        raise ValueError(f"node {node.id} has an empty model pool")
    q_n = int(q_n)
    if q_n < 0:
        raise ValueError("q_n must be >= 0")
    pool = tuple(node.model_pool)
    prev = prev_plan or empty_plan(node)
    quality = np.array([catalog[m].quality_by_node[node.id] for m in pool])
    ctx = _Ctx(
        pool=pool,
        r_min=np.array([catalog[m].min_mem_frac for m in pool]),
        load=np.array([catalog[m].load_time_s for m in pool]),
        quality=quality,
        order=np.lexsort((np.arange(len(pool)), -quality)),
        lms=[latency[m] for m in pool],
        q=q_n,
        budget0=slo - node.vector_search_time_s,
        eps1=cfg.eps1,
        charge=charge_loading,
    )
    K = len(node.gpus)
    prevs = []
    for k in range(K):
        pa = [prev.get(k, m) for m in pool]
        prevs.append((np.array([a.d for a in pa]), np.array([a.R for a in pa])))

    tables = [_dedupe(_coarse_table(ctx, cfg, *prevs[k])) for k in range(K)]
    if K == 1:
        chosen = [tables[0].take([_select_given(ctx, tables[0], np.zeros((1, len(pool)), dtype=np.int64), 0.0, 0)])]
    elif K == 2 and len(tables[0]) * len(tables[1]) <= _PAIR_LIMIT:
        i, j = _select_pair(ctx, tables[0], tables[1])
        chosen = [tables[0].take([i]), tables[1].take([j])]
    else:
        chosen = [t.take([int(np.argmin(t.nmod))]) for t in tables]
        chosen = _coordinate_ascent(ctx, tables, chosen, cfg.max_rounds)

    # local refinement of memory fractions on the finer grid
    for _ in range(cfg.max_rounds):
        improved = False
        for k in range(K):
            rest = [chosen[i] for i in range(K) if i != k]
            others_cap = sum((r.cap for r in rest), np.zeros((1, len(pool)), dtype=np.int64))
            fine = _fine_table(ctx, cfg, int(chosen[k].mask[0]), chosen[k].R[0], *prevs[k])
            b = _select_given(ctx, fine, others_cap, sum(float(r.tl[0]) for r in rest),
                              sum(int(r.nmod[0]) for r in rest))
            row = fine.take([b])
            before = _row_obj(ctx, chosen)
            after = _row_obj(ctx, chosen[:k] + [row] + chosen[k + 1:])
            if after > before + _TOL:
                chosen[k] = row
                improved = True
        if not improved:
            break

    return _materialise(ctx, node, q_n, slo, prev_plan, chosen, catalog, latency, cfg, charge_loading)


def _materialise(ctx, node, q_n, slo, prev_plan, chosen, catalog, latency, cfg, charge_loading) -> NodePlan:
    P = len(ctx.pool)
    total = sum(r.cap[0] for r in chosen)
    remaining = q_n
    served = np.zeros(P, dtype=np.int64)
    for j in ctx.order:
        served[j] = min(int(total[j]), remaining)
        remaining -= served[j]
    choice = []
    left = served.copy()
    for r in chosen:
        c = {}
        for j in range(P):
            if r.mask[0] >> j & 1:
                x = int(min(left[j], r.cap[0, j]))
                # counts below the servable interval cannot meet the budget
                if 0 < x < r.lo[0, j]:
                    x = 0
                left[j] -= x
                c[ctx.pool[j]] = (float(r.R[0, j]), x)
        choice.append(c)
    return build_plan(node, q_n, slo, prev_plan, choice, catalog, latency, cfg.eps1, charge_loading)
