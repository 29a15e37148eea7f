"""Shared domain types, run configuration and seeded random streams."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

DomainId = int
NodeId = int
GpuId = int
ModelId = int
SlotIndex = int

PROB_TOL = 1e-9


@dataclass(frozen=True)
class Query:
    id: int
    true_domain: DomainId
    embedding: np.ndarray
    arrival_slot: SlotIndex


@dataclass(frozen=True)
class ProbVector:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > PROB_TOL:
            raise ValueError(f"not a probability vector: {p}")
        object.__setattr__(self, "probs", p)

    def __len__(self):
        return len(self.probs)


@dataclass(frozen=True)
class ModelVariant:
    id: ModelId
    name: str
    load_time_s: float
    min_mem_frac: float
    # planted ground-truth coefficients (a, b, c, d, e) of the quadratic latency surface
    latency_params: tuple[float, float, float, float, float]
    delta_t_s: float = 0.05
    quality_by_node: tuple[float, ...] = ()
    size_class: str = ""


@dataclass(frozen=True)
class GpuConfig:
    mem_frac_capacity: float = 1.0


@dataclass(frozen=True)
class NodeConfig:
    id: NodeId
    gpus: tuple[GpuConfig, ...]
    model_pool: tuple[ModelId, ...]
    vector_search_time_s: float
    corpus_mix: tuple[float, ...]


@dataclass(frozen=True)
class PPOConfig:
    lr: float = 3e-4
    clip_eps: float = 0.02
    entropy_beta: float = 0.01
    buffer_threshold: int = 500
    epochs_per_update: int = 10
    minibatch_size: int = 0  # 0 = whole buffer
    alpha1: float = 1.0
    alpha2: float = 0.5
    norm_c: float = 1e-8


@dataclass(frozen=True)
class SolverConfig:
    eps1: float = 0.01
    grid_coarse: float = 0.05
    grid_fine: float = 0.01
    max_models_per_gpu: int = 3
    big_m: float = 10.0
    max_rounds: int = 10


@dataclass(frozen=True)
class SimConfig:
    exec_noise_sigma: float = 0.05
    hit_gain: float = 1.0
    miss_floor: float = 0.3
    quality_noise_sigma: float = 0.05
    affinity_exponent: float = 0.5
    ucb_alpha: float = 1.0
    latency_fit_noise: float = 0.05
    latency_fit_samples: int = 60


@dataclass(frozen=True)
class RunConfig:
    nodes: tuple[NodeConfig, ...]
    model_catalog: tuple[ModelVariant, ...]
    slot_latency_slo_s: float | tuple[float, ...] = 10.0
    slots: int = 200
    queries_per_slot: int | tuple[int, ...] = 500
    domain_count: int = 6
    embedding_dim: int = 32
    noise_sigma: float = 0.25
    prototype_layout: str = "random"
    dirichlet_alpha: float = 1.0
    partition_iid_share: float = 10.0
    overlap_factor: float = 0.0
    primary_domains_per_node: int = 3
    ppo: PPOConfig = field(default_factory=PPOConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    drop_threshold: float = 0.01
    probe_step: int = 10
    seed: int = 0

    def slo_at(self, slot: int) -> float:
        s = self.slot_latency_slo_s
        if isinstance(s, (int, float)):
            return float(s)
        return float(s[slot % len(s)])

    def demand_at(self, slot: int) -> int:
        b = self.queries_per_slot
        if isinstance(b, int):
            return b
        return int(b[slot])

    def total_slots(self) -> int:
        if isinstance(self.queries_per_slot, int):
            return self.slots
        return min(self.slots, len(self.queries_per_slot))

    def model(self, model_id: ModelId) -> ModelVariant:
        return self.model_catalog[model_id]

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)


# ---------------------------------------------------------------- validation


def _check_prob(vec, path: str, out: list[str]):
    v = np.asarray(vec, dtype=float)
    if v.size == 0:
        out.append(f"{path}: empty")
        return
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        out.append(f"{path}: entries must be finite and >= 0")
    elif abs(v.sum() - 1.0) > PROB_TOL:
        out.append(f"{path}: sums to {v.sum():.6g}, expected 1")


def validate_config(cfg: RunConfig) -> list[str]:
    """Return every invariant violation as ``"<path>: <reason>"``; empty when valid."""
    out: list[str] = []
    n_models = len(cfg.model_catalog)
    n_nodes = len(cfg.nodes)
    if n_nodes == 0:
        out.append("nodes: at least one node required")
    if n_models == 0:
        out.append("model_catalog: at least one model required")

    for i, m in enumerate(cfg.model_catalog):
        p = f"model_catalog[{i}]"
        if m.id != i:
            out.append(f"{p}.id: expected dense id {i}, got {m.id}")
        if not m.load_time_s > 0:
            out.append(f"{p}.load_time_s: must be > 0")
        if not (0 < m.min_mem_frac <= 1):
            out.append(f"{p}.min_mem_frac: must lie in (0, 1]")
        if not m.delta_t_s >= 0:
            out.append(f"{p}.delta_t_s: must be >= 0")
        if len(m.latency_params) != 5 or not np.all(np.isfinite(m.latency_params)):
            out.append(f"{p}.latency_params: need 5 finite coefficients")
        if len(m.quality_by_node) != n_nodes:
            out.append(f"{p}.quality_by_node: need one entry per node ({n_nodes})")
        for j, q in enumerate(m.quality_by_node):
            if not (0 <= q <= 1):
                out.append(f"{p}.quality_by_node[{j}]: must lie in [0, 1]")

    for i, nd in enumerate(cfg.nodes):
        p = f"nodes[{i}]"
        if nd.id != i:
            out.append(f"{p}.id: expected dense id {i}, got {nd.id}")
        if len(nd.gpus) == 0:
            out.append(f"{p}.gpus: at least one GPU required")
        for k, g in enumerate(nd.gpus):
            if g.mem_frac_capacity != 1.0:
                out.append(f"{p}.gpus[{k}].mem_frac_capacity: must be 1.0")
        if len(nd.model_pool) == 0:
            out.append(f"{p}.model_pool: must be non-empty")
        for m in nd.model_pool:
            if not (0 <= m < n_models):
                out.append(f"{p}.model_pool: unknown model id {m}")
        if len(set(nd.model_pool)) != len(nd.model_pool):
            out.append(f"{p}.model_pool: duplicate model ids")
        if not nd.vector_search_time_s >= 0:
            out.append(f"{p}.vector_search_time_s: must be >= 0")
        if len(nd.corpus_mix) != cfg.domain_count:
            out.append(f"{p}.corpus_mix: need {cfg.domain_count} entries")
        _check_prob(nd.corpus_mix, f"{p}.corpus_mix", out)

    pp = cfg.ppo
    if pp.alpha1 < 0 or pp.alpha2 < 0:
        out.append("ppo.alpha1/alpha2: must be >= 0")
    if pp.alpha1 == 0 and pp.alpha2 == 0:
        out.append("ppo.alpha1/alpha2: not both zero")
    if pp.buffer_threshold < 1:
        out.append("ppo.buffer_threshold: must be >= 1")
    if not pp.lr > 0:
        out.append("ppo.lr: must be > 0")
    if not pp.clip_eps > 0:
        out.append("ppo.clip_eps: must be > 0")
    if pp.epochs_per_update < 1:
        out.append("ppo.epochs_per_update: must be >= 1")
    sv = cfg.solver
    if not (0 < sv.eps1 <= 0.1):
        out.append("solver.eps1: must lie in (0, 0.1]")
    if not (0 < sv.grid_fine <= sv.grid_coarse):
        out.append("solver.grid_fine: must satisfy 0 < grid_fine <= grid_coarse")
    if sv.max_models_per_gpu < 1:
        out.append("solver.max_models_per_gpu: must be >= 1")

    if cfg.domain_count < 1:
        out.append("domain_count: must be >= 1")
    if cfg.embedding_dim < 1:
        out.append("embedding_dim: must be >= 1")
    if cfg.prototype_layout not in ("random", "paired"):
        out.append("prototype_layout: must be 'random' or 'paired'")
    if not cfg.noise_sigma > 0:
        out.append("noise_sigma: must be > 0")
    if not cfg.dirichlet_alpha > 0:
        out.append("dirichlet_alpha: must be > 0")
    if not (0 <= cfg.partition_iid_share <= 100):
        out.append("partition_iid_share: must lie in [0, 100]")
    if not (0 <= cfg.overlap_factor <= 1):
        out.append("overlap_factor: must lie in [0, 1]")
    if not (0 < cfg.drop_threshold < 1):
        out.append("drop_threshold: must lie in (0, 1)")
    if cfg.slots < 0:
        out.append("slots: must be >= 0")
    slo = cfg.slot_latency_slo_s
    slo_list = [slo] if isinstance(slo, (int, float)) else list(slo)
    if not slo_list or any(not (s > 0) for s in slo_list):
        out.append("slot_latency_slo_s: every entry must be > 0")
    b = cfg.queries_per_slot
    b_list = [b] if isinstance(b, int) else list(b)
    if not b_list or any(x < 0 for x in b_list):
        out.append("queries_per_slot: counts must be >= 0 and schedule non-empty")
    return out


# -------------------------------------------------------------- serialization


def config_to_dict(cfg: RunConfig) -> dict[str, Any]:
    def clean(v):
        if isinstance(v, tuple):
            return [clean(x) for x in v]
        if isinstance(v, list):
            return [clean(x) for x in v]
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (np.floating,)):
            return float(v)
        if isinstance(v, (np.integer,)):
            return int(v)
        return v

    return clean(asdict(cfg))


def _tuplify(v):
    if isinstance(v, list):
        return tuple(_tuplify(x) for x in v)
    return v


def _build(cls, data: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"{cls.__name__}: unknown fields {sorted(unknown)}")
    return cls(**{k: _tuplify(v) for k, v in data.items()})


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    d = copy.deepcopy(data)
    d["nodes"] = tuple(
        _build(NodeConfig, {**n, "gpus": [GpuConfig(**g) for g in n["gpus"]]}) for n in d["nodes"]
    )
    d["model_catalog"] = tuple(_build(ModelVariant, m) for m in d["model_catalog"])
    for key, cls in (("ppo", PPOConfig), ("solver", SolverConfig), ("sim", SimConfig)):
        if key in d:
            d[key] = _build(cls, d[key])
    return _build(RunConfig, d)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False))


def load_config(path: str | Path) -> RunConfig:
    return config_from_dict(yaml.safe_load(Path(path).read_text()))


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -------------------------------------------------------------- random streams


def rng_stream(seed: int, label: str) -> np.random.Generator:
    """Independent PCG64 generator keyed by ``(seed, label)``.

    The label is hashed with SHA-256 and its first four 32-bit words are mixed
    with the seed through ``numpy.random.SeedSequence``; both steps are stable
    across numpy releases, so sequences reproduce across builds.
    """
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF, *words])
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------- defaults


def planted_catalog(n_nodes: int) -> tuple[ModelVariant, ...]:
    """Small / mid / large variants with planted latency and quality."""
    specs = [
        # name, size, l_m, r_m, (a, b, c, d, e), base quality
        ("llm-1b", "small", 1.0, 0.15, (0.002, 0.5, 0.045, -0.9, 1.0), 0.50),
        ("llm-3b", "mid", 2.0, 0.30, (0.003, 0.7, 0.055, -1.6, 6.2), 0.66),
        ("llm-8b", "large", 3.5, 0.50, (0.004, 1.0, 0.065, -2.5, 8.6), 0.80),
    ]
    out = []
    for i, (name, size, lm, rm, coeffs, q) in enumerate(specs):
        quality = tuple(round(q + 0.02 * ((n * 7 + i * 3) % 3 - 1), 4) for n in range(n_nodes))
        out.append(
            ModelVariant(
                id=i,
                name=name,
                load_time_s=lm,
                min_mem_frac=rm,
                latency_params=coeffs,
                delta_t_s=0.05,
                quality_by_node=quality,
                size_class=size,
            )
        )
    return tuple(out)


# domains 2k and 2k+1 share a prototype axis with opposite signs. Pairs 0/1 and
# 2/3 are spread so a linear scorer can still orient nodes against each other;
# pair 4/5 lives only on node 3, so no linear score ranks node 3 first for both.
PAIRED_PRIMARIES = ((0, 1, 2), (0, 2, 3), (0, 1, 3), (1, 4, 5))


def default_config(seed: int = 0, layout: str = "paired", iid_share: float = 2.0,
                   dirichlet_alpha: float = 5.0) -> RunConfig:
    """Four heterogeneous nodes (two single-GPU, two dual-GPU), six domains.

    ``layout="paired"`` uses antipodal prototypes with the fixed primaries above;
    ``"random"`` draws separable random prototypes and a balanced random assignment.
    """
    from .workload import partition_corpora

    n_nodes, n_domains = 4, 6
    catalog = planted_catalog(n_nodes)
    primaries = PAIRED_PRIMARIES if layout == "paired" else None
    mixes = partition_corpora(n_domains, n_nodes, iid_share, 0.0, 3, rng_stream(seed, "partition"), primaries)
    nodes = []
    for n in range(n_nodes):
        n_gpu = 1 if n < 2 else 2
        nodes.append(
            NodeConfig(
                id=n,
                gpus=tuple(GpuConfig() for _ in range(n_gpu)),
                model_pool=tuple(m.id for m in catalog),
                vector_search_time_s=0.5,
                corpus_mix=tuple(float(x) for x in mixes[n]),
            )
        )
    return RunConfig(nodes=tuple(nodes), model_catalog=catalog, seed=seed, partition_iid_share=iid_share,
                     dirichlet_alpha=dirichlet_alpha, prototype_layout=layout)


def as_prob_vectors(rows: Sequence[Sequence[float]] | np.ndarray) -> np.ndarray:
    arr = np.asarray(rows, dtype=float)
    if arr.ndim != 2:
        raise ValueError("expected a 2-D array of probability rows")
    return arr
