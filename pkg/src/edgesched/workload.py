"""Per-slot query synthesis, domain prototypes, corpus partitioning, trace files."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Query


@dataclass(frozen=True)
class DomainPrototypes:
    vectors: np.ndarray  # (domains, D), unit rows
    noise_sigma: float

    @property
    def domain_count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def max_pairwise_cosine(self) -> float:
        g = self.vectors @ self.vectors.T
        np.fill_diagonal(g, -np.inf)
        return float(g.max()) if len(g) > 1 else -1.0

    def save(self, path: str | Path) -> None:
        np.savez(path, vectors=self.vectors, noise_sigma=self.noise_sigma)

    @classmethod
    def load(cls, path: str | Path) -> "DomainPrototypes":
        with np.load(path) as z:
            return cls(z["vectors"], float(z["noise_sigma"]))


PROTOTYPE_LAYOUTS = ("random", "paired")


def make_prototypes(
    domain_count: int,
    dim: int,
    noise_sigma: float,
    rng: np.random.Generator,
    max_cos: float = 0.5,
    layout: str = "random",
) -> DomainPrototypes:
    """Unit prototypes with every pairwise cosine below ``max_cos``.

    ``random`` redraws Gaussian directions until they are separable. ``paired``
    draws orthonormal directions and gives domains ``2k`` and ``2k+1`` opposite
    signs, so no linear score can rank both members of a pair above a third domain.
    """
    if noise_sigma <= 0:
        raise ValueError("noise_sigma must be > 0")
    if layout == "paired":
        half = (domain_count + 1) // 2
        if half > dim:
            raise ValueError("paired layout needs dim >= ceil(domain_count / 2)")
        basis, _ = np.linalg.qr(rng.standard_normal((dim, half)))
        v = np.array([basis[:, d // 2] * (1 if d % 2 == 0 else -1) for d in range(domain_count)])
        return DomainPrototypes(v, float(noise_sigma))
    if layout != "random":
        raise ValueError(f"unknown prototype layout {layout!r}")
    for _ in range(1000):
        v = rng.standard_normal((domain_count, dim))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        protos = DomainPrototypes(v, float(noise_sigma))
        if protos.max_pairwise_cosine() < max_cos:
            return protos
    raise RuntimeError(f"could not draw {domain_count} separable prototypes in {dim} dims")


@dataclass(frozen=True)
class SlotBatch:
    slot: int
    ids: np.ndarray
    domains: np.ndarray
    embeddings: np.ndarray
    domain_histogram: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def queries(self) -> list[Query]:
        return [
            Query(int(i), int(d), e, self.slot)
            for i, d, e in zip(self.ids, self.domains, self.embeddings)
        ]


def gen_slot_batch(
    slot: int,
    b_t: int,
    dirichlet_alpha: float,
    prototypes: DomainPrototypes,
    rng: np.random.Generator,
    first_id: int = 0,
) -> SlotBatch:
    if b_t < 0:
        raise ValueError("B_t must be >= 0")
    k = prototypes.domain_count
    mix = rng.dirichlet(np.full(k, float(dirichlet_alpha)))
    # very small alpha can underflow every component
    if not np.all(np.isfinite(mix)) or mix.sum() <= 0:
        mix = np.zeros(k)
        mix[rng.integers(k)] = 1.0
    mix = mix / mix.sum()
    domains = rng.choice(k, size=b_t, p=mix)
    noise = rng.standard_normal((b_t, prototypes.dim)) * prototypes.noise_sigma
    emb = prototypes.vectors[domains] + noise
    return SlotBatch(
        slot=slot,
        ids=np.arange(first_id, first_id + b_t),
        domains=domains,
        embeddings=emb,
        domain_histogram=np.bincount(domains, minlength=k),
    )


def assign_primary_domains(
    domain_count: int, node_count: int, per_node: int, rng: np.random.Generator
) -> list[list[int]]:
    """Pick ``per_node`` primary domains per node, balancing how often each domain is used."""
    usage = np.zeros(domain_count)
    out = []
    for _ in range(node_count):
        jitter = rng.random(domain_count)
        order = np.lexsort((jitter, usage))
        chosen = sorted(int(d) for d in order[:per_node])
        usage[chosen] += 1
        out.append(chosen)
    return out


def partition_corpora(
    domain_count: int,
    node_count: int,
    iid_share_s: float,
    overlap_factor: float,
    primary_domains_per_node: int,
    rng: np.random.Generator,
    primaries: Sequence[Sequence[int]] | None = None,
) -> np.ndarray:
    """Dual-distribution corpus mixes, one row per node.

    ``iid_share_s`` percent of each node's mass is spread uniformly over all
    domains, the rest uniformly over the node's primary domains; the overlap
    factor then pulls every row linearly toward the global uniform mix.
    Explicit ``primaries`` (one list per node) replace the balanced random pick.
    """
    if not (0 <= iid_share_s <= 100):
        raise ValueError("iid_share_s must lie in [0, 100]")
    if not (0 <= overlap_factor <= 1):
        raise ValueError("overlap_factor must lie in [0, 1]")
    if primary_domains_per_node > domain_count:
        raise ValueError("primary_domains_per_node exceeds domain_count")
    s = iid_share_s / 100.0
    if primary_domains_per_node == 0 and s < 1:
        raise ValueError("primary_domains_per_node = 0 needs a fully i.i.d. share")

    uniform = np.full(domain_count, 1.0 / domain_count)
    mixes = np.tile(s * uniform, (node_count, 1))
    if s < 1:
        if primaries is None:
            primaries = assign_primary_domains(domain_count, node_count, primary_domains_per_node, rng)
        elif len(primaries) != node_count or any(
            len(set(d)) != primary_domains_per_node or not all(0 <= x < domain_count for x in d) for d in primaries
        ):
            raise ValueError("primaries must list primary_domains_per_node distinct valid domains per node")
        for n, doms in enumerate(primaries):
            mixes[n, list(doms)] += (1 - s) / primary_domains_per_node
    mixes = (1 - overlap_factor) * mixes + overlap_factor * uniform
    return mixes / mixes.sum(axis=1, keepdims=True)


class TraceError(ValueError):
    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


def load_trace(path: str | Path) -> list[int]:
    """Read a per-slot demand schedule: one non-negative integer per line.

    For CSV records the last field is taken as the count.
    """
    counts = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        field = line.split(",")[-1].strip()
        try:
            v = int(field)
        except ValueError:
            raise TraceError(lineno, f"not an integer: {field!r}") from None
        if v < 0:
            raise TraceError(lineno, f"negative count {v}")
        counts.append(v)
    return counts
