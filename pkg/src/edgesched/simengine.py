"""Slot-granular simulation: workload, routing, allocation, per-node plans, execution and feedback."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .baseline_policies import DEPLOYMENTS, StaticDeployment, static_plan
from .core import NodeConfig, RunConfig, config_hash, rng_stream
from .identifier import (
    Adam,
    FeedbackBuffer,
    FeedbackRecord,
    LinUCBState,
    PolicyParams,
    expected_quality_matrix,
    init_policy,
    linucb_choose_batch,
    linucb_update,
    one_hot,
    oracle_route,
    policy_log_probs,
    random_probs,
    record_and_maybe_train,
)
from .identifier.metrics import composite_score
from .internode import CapacityModel, allocate, fit_capacity, integer_capacities, profile_capacity
from .intranode import LatencyModel, NodePlan, fit_latency, predict_latency, servable_range, solve_intranode, synth_latency_samples
from .workload import DomainPrototypes, gen_slot_batch, make_prototypes

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ROUTERS = ("ppo", "random", "linucb", "oracle")
INTRA_MODES = ("adaptive", *DEPLOYMENTS)


class SlotError(RuntimeError):
    """A pipeline stage failed; the state was rolled back to the previous slot."""


# ---------------------------------------------------------------- quality oracle


def affinity_from_mixes(mixes: np.ndarray, exponent: float = 0.5) -> np.ndarray:
    """Retrieval-hit probability per (domain, node): sharpened corpus share rescaled to max 1."""
    a = np.asarray(mixes, dtype=float).T ** exponent
    top = a.max()
    return a / top if top > 0 else a


@dataclass
class QualityOracle:
    affinity: np.ndarray  # (domains, nodes)
    model_base: np.ndarray  # (models, nodes)
    hit_gain: float = 1.0
    miss_floor: float = 0.3
    noise_sigma_q: float = 0.05

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "QualityOracle":
        mixes = np.array([n.corpus_mix for n in cfg.nodes])
        base = np.array([m.quality_by_node for m in cfg.model_catalog])
        s = cfg.sim
        return cls(affinity_from_mixes(mixes, s.affinity_exponent), base, s.hit_gain, s.miss_floor,
                   s.quality_noise_sigma)

    def expected(self, domain: int, node: int, model: int) -> float:
        """Mean of the un-noised base score (the clamped noise only shifts it near 0 or 1)."""
        q = self.model_base[model, node]
        a = self.affinity[domain, node]
        return a * min(q * self.hit_gain, 1.0) + (1 - a) * min(q * self.miss_floor, 1.0)

    def routing_matrix(self, alpha1: float, alpha2: float) -> np.ndarray:
        """Expected composite per (domain, node) with a node's models weighted equally."""
        return expected_quality_matrix(self.affinity, self.model_base.mean(axis=0), self.hit_gain,
                                       self.miss_floor, alpha1, alpha2)


def emit_feedback_batch(domains, nodes, models, oracle: QualityOracle, rng: np.random.Generator):
    domains = np.asarray(domains, dtype=int)
    nodes = np.asarray(nodes, dtype=int)
    models = np.asarray(models, dtype=int)
    n = len(domains)
    u = rng.random(n)
    z = rng.standard_normal((n, 2))
    q = oracle.model_base[models, nodes]
    hit = u < oracle.affinity[domains, nodes]
    base = np.where(hit, q * oracle.hit_gain, q * oracle.miss_floor)
    f = np.clip(base[:, None] + oracle.noise_sigma_q * z, 0.0, 1.0)
    return f[:, 0], f[:, 1]


def emit_feedback(domain: int, node: int, model: int, oracle: QualityOracle, rng: np.random.Generator):
    f_r, f_b = emit_feedback_batch([domain], [node], [model], oracle, rng)
    return float(f_r[0]), float(f_b[0])


# ---------------------------------------------------------------- execution


@dataclass
class ExecResult:
    completion_s: dict[tuple[int, int], float]
    served: dict[tuple[int, int], int]
    extra_drops: int


def simulate_execution(
    plan: NodePlan,
    node: NodeConfig,
    true_latency: Mapping[int, LatencyModel],
    rng: np.random.Generator,
    sigma: float = 0.05,
) -> ExecResult:
    """Run the plan against the true latency surfaces with a lognormal slowdown per model.

    Queries of a model that would finish after ``slo - TS`` are dropped; the
    rest of that model's share still completes.
    """
    slo = plan.slo_s
    budget = slo - node.vector_search_time_s
    completion, served = {}, {}
    extra = 0
    for g in plan.gpus:
        for m, a in g.models.items():
            if a.queries <= 0:
                continue
            mult = math.exp(sigma * rng.standard_normal()) if sigma > 0 else 1.0
            lm = true_latency[m]
            t = float(predict_latency(lm, a.queries, a.R)) * mult
            completion[(g.gpu, m)] = t + g.loading_time_s + node.vector_search_time_s
            x = a.queries
            if t + g.loading_time_s > budget + 1e-9:
                left = (budget - g.loading_time_s) / mult
                lo, hi = servable_range(lm, a.R, left) if left > 0 else (1, -1)
                x = min(x, int(hi)) if hi >= max(int(lo), 1) else 0
            served[(g.gpu, m)] = x
            extra += a.queries - x
    return ExecResult(completion, served, extra)


# ---------------------------------------------------------------- metrics


@dataclass
class SlotMetrics:
    slot: int
    b_t: int
    served: int
    dropped: int
    drop_rate: float
    mean_quality: float
    mean_f_r: float
    mean_f_b: float
    effective_quality: float
    planned_drops: int
    exec_drops: int
    node_q: list[int]
    node_p: list[float]
    node_tl_s: list[float]
    node_capacity: list[float]
    worst_completion_s: float
    model_share: dict[str, float]
    slo_s: float
    scaled: bool
    reassigned: int
    trained: bool
    sched_wall_s: float = 0.0

    def to_record(self) -> dict:
        d = asdict(self)
        d.pop("sched_wall_s")
        d["record"] = "slot"
        return d


def _empty_metrics(slot: int, n_nodes: int, slo: float) -> SlotMetrics:
    return SlotMetrics(slot, 0, 0, 0, 0.0, 0.0, 0.0, 0.0, 0.0, 0, 0, [0] * n_nodes, [0.0] * n_nodes,
                       [0.0] * n_nodes, [0.0] * n_nodes, 0.0, {}, slo, False, 0, False)


# ---------------------------------------------------------------- state


@dataclass
class SimState:
    cfg: RunConfig
    router: str
    inter_node: bool
    prototypes: DomainPrototypes
    fitted: dict[int, LatencyModel]
    truth: dict[int, LatencyModel]
    capacities: list[CapacityModel]
    oracle: QualityOracle
    rngs: dict[str, np.random.Generator]
    prev_plans: list[NodePlan | None]
    slot: int = 0
    next_query_id: int = 0
    policy: PolicyParams | None = None
    optimizer: Adam | None = None
    buffer: FeedbackBuffer | None = None
    ucb: LinUCBState | None = None
    plans_log: list[dict] = field(default_factory=list)
    train_log: list[dict] = field(default_factory=list)
    updates: int = 0
    deployment: str = "adaptive"


def true_latency_models(cfg: RunConfig) -> dict[int, LatencyModel]:
    return {m.id: LatencyModel.quadratic(*m.latency_params, delta_t_s=0.0, model_id=m.id) for m in cfg.model_catalog}


def fit_latency_models(cfg: RunConfig, family: str = "quadratic") -> dict[int, LatencyModel]:
    """Fit each model's surface to noisy benchmark samples drawn from its planted truth."""
    out = {}
    for m in cfg.model_catalog:
        truth = LatencyModel.quadratic(*m.latency_params, model_id=m.id)
        rng = rng_stream(cfg.seed, f"latency-samples/{m.id}")
        samples = synth_latency_samples(truth, rng, cfg.sim.latency_fit_samples, cfg.sim.latency_fit_noise,
                                        r_min=m.min_mem_frac)
        out[m.id] = fit_latency(samples, family, m.delta_t_s, m.id)
    return out


def capacity_probe(cfg: RunConfig, node: NodeConfig, latency: Mapping[int, LatencyModel]) -> Callable[[int, float], float]:
    """Predicted steady-state drop rate of ``node`` at a given load and SLO."""

    def probe(load: int, slo: float) -> float:
        if load <= 0:
            return 0.0
        plan = solve_intranode(node, load, slo, None, cfg.solver, cfg.model_catalog, latency, charge_loading=False)
        return plan.dropped / load

    return probe


def profile_nodes(cfg: RunConfig, latency: Mapping[int, LatencyModel],
                  latencies: Sequence[float] = tuple(range(5, 65, 5))) -> list[CapacityModel]:
    out = []
    for node in cfg.nodes:
        pts = profile_capacity(capacity_probe(cfg, node, latency), latencies, cfg.drop_threshold, cfg.probe_step,
                               node=node.id)
        out.append(fit_capacity(pts, node.id))
    return out


def init_state(
    cfg: RunConfig,
    router: str = "ppo",
    inter_node: bool = True,
    *,
    fitted: dict[int, LatencyModel] | None = None,
    capacities: list[CapacityModel] | None = None,
    prototypes: DomainPrototypes | None = None,
    policy: PolicyParams | None = None,
    deployment: str = "adaptive",
) -> SimState:
    """Build a fresh simulation state; latency fits, capacities and prototypes may be shared between runs."""
    if router not in ROUTERS:
        raise ValueError(f"router must be one of {ROUTERS}, got {router!r}")
    if deployment not in INTRA_MODES:
        raise ValueError(f"deployment must be one of {INTRA_MODES}, got {deployment!r}")
    seed = cfg.seed
    fitted = fitted or fit_latency_models(cfg)
    capacities = capacities or profile_nodes(cfg, fitted)
    prototypes = prototypes or make_prototypes(cfg.domain_count, cfg.embedding_dim, cfg.noise_sigma,
                                               rng_stream(seed, "prototypes"), layout=cfg.prototype_layout)
    st = SimState(
        cfg=cfg,
        router=router,
        inter_node=inter_node,
        prototypes=prototypes,
        fitted=fitted,
        truth=true_latency_models(cfg),
        capacities=capacities,
        oracle=QualityOracle.from_config(cfg),
        rngs={k: rng_stream(seed, k) for k in ("workload", "route", "alloc", "dispatch", "exec", "feedback", "ppo")},
        prev_plans=[None] * len(cfg.nodes),
        deployment=deployment,
    )
    n = len(cfg.nodes)
    if router == "ppo":
        st.policy = policy or init_policy(cfg.embedding_dim, n, rng_stream(seed, "policy-init"))
        st.optimizer = Adam(cfg.ppo.lr)
        st.buffer = FeedbackBuffer(cfg.ppo.buffer_threshold)
    elif router == "linucb":
        st.ucb = LinUCBState.create(n, cfg.embedding_dim)
    return st


# ---------------------------------------------------------------- slot loop


def _route(st: SimState, emb: np.ndarray, domains: np.ndarray) -> np.ndarray:
    n = len(st.cfg.nodes)
    if st.router == "ppo":
        return np.exp(policy_log_probs(st.policy, emb))
    if st.router == "random":
        return random_probs(len(emb), n)
    if st.router == "linucb":
        return one_hot(linucb_choose_batch(st.ucb, emb, st.cfg.sim.ucb_alpha), n)
    return one_hot(oracle_route(domains, st.oracle.routing_matrix(st.cfg.ppo.alpha1, st.cfg.ppo.alpha2)), n)


def _snapshot(st: SimState) -> dict:
    return {
        "rngs": {k: copy.deepcopy(g.bit_generator.state) for k, g in st.rngs.items()},
        "policy": st.policy,
        "optimizer": copy.deepcopy(st.optimizer),
        "buffer": (list(st.buffer.records), st.buffer.last_stats) if st.buffer else None,
        "ucb": copy.deepcopy(st.ucb),
        "scalars": (list(st.prev_plans), st.slot, st.next_query_id, st.updates),
        "logs": (len(st.plans_log), len(st.train_log)),
    }


def _restore(st: SimState, snap: dict) -> None:
    for k, g in st.rngs.items():
        g.bit_generator.state = snap["rngs"][k]
    st.policy, st.optimizer, st.ucb = snap["policy"], snap["optimizer"], snap["ucb"]
    if snap["buffer"] is not None:
        st.buffer.records, st.buffer.last_stats = snap["buffer"]
    st.prev_plans, st.slot, st.next_query_id, st.updates = snap["scalars"]
    del st.plans_log[snap["logs"][0]:]
    del st.train_log[snap["logs"][1]:]


def run_slot(st: SimState, slot: int | None = None) -> tuple[SimState, SlotMetrics]:
    """One slot of the full pipeline. On failure the state is rolled back and SlotError raised."""
    snap = _snapshot(st)
    t = st.slot if slot is None else slot
    try:
        return _run_slot(st, t)
    except Exception as exc:
        _restore(st, snap)
        raise SlotError(f"slot {t} aborted: {type(exc).__name__}: {exc}") from exc


def _plan(st: SimState, node: NodeConfig, q_n: int, slo: float) -> NodePlan:
    cfg = st.cfg
    prev = st.prev_plans[node.id]
    if st.deployment == "adaptive":
        return solve_intranode(node, q_n, slo, prev, cfg.solver, cfg.model_catalog, st.fitted)
    return static_plan(StaticDeployment(st.deployment), node, q_n, slo, prev, cfg.model_catalog, st.fitted,
                       cfg.solver.eps1)


def _run_slot(st: SimState, t: int) -> tuple[SimState, SlotMetrics]:
    cfg = st.cfg
    slo = cfg.slo_at(t)
    b_t = cfg.demand_at(t)
    n_nodes = len(cfg.nodes)
    if b_t == 0:
        st.slot = t + 1
        return st, _empty_metrics(t, n_nodes, slo)

    t0 = time.perf_counter()
    batch = gen_slot_batch(t, b_t, cfg.dirichlet_alpha, st.prototypes, st.rngs["workload"], st.next_query_id)
    probs = _route(st, batch.embeddings, batch.domains)
    caps = integer_capacities(st.capacities, slo)
    alloc = allocate(b_t, probs, caps, st.rngs["alloc"], capacity_check=st.inter_node)
    plans = []
    for node in cfg.nodes:
        q_n = int(alloc.counts[node.id])
        plans.append(_plan(st, node, q_n, slo))
    wall = time.perf_counter() - t0

    served_idx, served_node, served_model = [], [], []
    exec_drops = 0
    size_counts: dict[str, int] = {}
    for node, plan in zip(cfg.nodes, plans):
        res = simulate_execution(plan, node, st.truth, st.rngs["exec"], cfg.sim.exec_noise_sigma)
        exec_drops += res.extra_drops
        mine = np.flatnonzero(alloc.assignments == node.id)
        mine = mine[st.rngs["dispatch"].permutation(len(mine))]
        pos = 0
        for g in plan.gpus:
            for m, a in g.models.items():
                if a.queries <= 0:
                    continue
                chunk = mine[pos : pos + a.queries]
                pos += a.queries
                k = res.served[(g.gpu, m)]
                served_idx.extend(chunk[:k].tolist())
                served_node.extend([node.id] * k)
                served_model.extend([m] * k)
                size = cfg.model_catalog[m].size_class or str(m)
                size_counts[size] = size_counts.get(size, 0) + k
    order = np.argsort(served_idx, kind="stable")
    served_idx = np.asarray(served_idx, dtype=int)[order]
    served_node = np.asarray(served_node, dtype=int)[order]
    served_model = np.asarray(served_model, dtype=int)[order]

    f_r, f_b = emit_feedback_batch(batch.domains[served_idx], served_node, served_model, st.oracle,
                                   st.rngs["feedback"])
    f = composite_score(f_r, f_b, cfg.ppo.alpha1, cfg.ppo.alpha2)
    trained = _learn(st, batch.embeddings, probs, served_idx, served_node, f, t)

    served = len(served_idx)
    dropped = b_t - served
    planned = sum(p.dropped for p in plans)
    st.prev_plans = plans
    st.plans_log.append({"slot": t, "plans": [p.to_record() for p in plans]})
    st.next_query_id += b_t
    st.slot = t + 1
    metrics = SlotMetrics(
        slot=t,
        b_t=b_t,
        served=served,
        dropped=dropped,
        drop_rate=dropped / b_t,
        mean_quality=float(f.mean()) if served else 0.0,
        mean_f_r=float(f_r.mean()) if served else 0.0,
        mean_f_b=float(f_b.mean()) if served else 0.0,
        effective_quality=float(f.sum() / b_t),
        planned_drops=planned,
        exec_drops=exec_drops,
        node_q=[int(x) for x in alloc.counts],
        node_p=[float(x) for x in alloc.proportions],
        node_tl_s=[p.total_loading_s() for p in plans],
        node_capacity=[float(c) for c in caps],
        worst_completion_s=max(p.predicted_completion_s for p in plans),
        model_share={k: v / b_t for k, v in sorted(size_counts.items())},
        slo_s=slo,
        scaled=bool(alloc.scaled),
        reassigned=int(alloc.reassigned),
        trained=trained,
        sched_wall_s=wall,
    )
    return st, metrics


def _learn(st: SimState, emb, probs, idx, nodes, f, slot) -> bool:
    if st.router == "linucb":
        for i, n, r in zip(idx, nodes, f):
            linucb_update(st.ucb, emb[i], int(n), float(r))
        return False
    if st.router != "ppo":
        return False
    trained = False
    logp = policy_log_probs(st.policy, emb[idx])[np.arange(len(idx)), nodes] if len(idx) else np.zeros(0)
    for i, n, lp, r in zip(idx, nodes, logp, f):
        rec = FeedbackRecord(emb[i], int(n), float(min(lp, 0.0)), float(r), slot)
        st.buffer, st.policy, did = record_and_maybe_train(st.buffer, rec, st.policy, st.cfg.ppo,
                                                           rng=st.rngs["ppo"], optimizer=st.optimizer)
        if did:
            trained = True
            st.updates += 1
            st.train_log.append({"slot": slot, **asdict(st.buffer.last_stats)})
    return trained


# ---------------------------------------------------------------- experiments


@dataclass
class ExperimentResult:
    metrics: list[SlotMetrics]
    summary: dict
    state: SimState


def summarize(metrics: Sequence[SlotMetrics]) -> dict:
    active = [m for m in metrics if m.b_t > 0]
    if not active:
        return {"slots": len(metrics), "mean_quality": 0.0, "mean_drop_rate": 0.0, "last_decile_quality": 0.0,
                "mean_effective_quality": 0.0, "last_decile_effective_quality": 0.0}
    tail = active[-max(1, len(active) // 10):]
    return {
        "slots": len(metrics),
        "mean_quality": float(np.mean([m.mean_quality for m in active])),
        "mean_drop_rate": float(np.mean([m.drop_rate for m in active])),
        "last_decile_quality": float(np.mean([m.mean_quality for m in tail])),
        "mean_effective_quality": float(np.mean([m.effective_quality for m in active])),
        "last_decile_effective_quality": float(np.mean([m.effective_quality for m in tail])),
    }


def run_experiment(
    cfg: RunConfig,
    router: str = "ppo",
    inter_node: bool = True,
    *,
    state: SimState | None = None,
    on_slot: Callable[[SlotMetrics], None] | None = None,
) -> ExperimentResult:
    st = state or init_state(cfg, router, inter_node)
    out = []
    for t in range(cfg.total_slots()):
        st, m = run_slot(st, t)
        out.append(m)
        if on_slot:
            on_slot(m)
    return ExperimentResult(out, summarize(out), st)


def header_record(cfg: RunConfig, router: str, inter_node: bool, deployment: str = "adaptive") -> dict:
    return {
        "deployment": deployment,
        "record": "header",
        "schema_version": SCHEMA_VERSION,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "router": router,
        "inter_node": "on" if inter_node else "off",
        "feedback_on_drops": False,
    }


def write_metrics_jsonl(path: str | Path, cfg: RunConfig, router: str, inter_node: bool,
                        metrics: Sequence[SlotMetrics], deployment: str = "adaptive") -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(header_record(cfg, router, inter_node, deployment), sort_keys=True) + "\n")
        for m in metrics:
            fh.write(json.dumps({"schema_version": SCHEMA_VERSION, **m.to_record()}, sort_keys=True) + "\n")


def read_metrics_jsonl(path: str | Path) -> tuple[dict, list[dict]]:
    header, rows = {}, []
    with open(path) as fh:
        for line in fh:
            rec = json.loads(line)
            if rec.get("record") == "header":
                header = rec
            else:
                rows.append(rec)
    return header, rows


SUMMARY_FIELDS = ["schema_version", "config_hash", "seed", "router", "inter_node", "deployment", "slots",
                  "mean_quality",
                  "mean_drop_rate", "last_decile_quality", "mean_effective_quality", "last_decile_effective_quality"]


def write_summary_csv(path: str | Path, cfg: RunConfig, router: str, inter_node: bool, summary: dict,
                      deployment: str = "adaptive") -> None:
    row = {**header_record(cfg, router, inter_node, deployment), **summary}
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
