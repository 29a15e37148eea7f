"""Node capacity profiling / linear fit and the capacity-aware inter-node allocator."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_LATENCIES = tuple(range(5, 65, 5))

# probe(load, slo) -> drop rate in [0, 1]
Probe = Callable[[int, float], float]


@dataclass(frozen=True)
class CapacityModel:
    node: int
    k_n: float
    b_n: float
    support: tuple[tuple[float, float], ...]
    rmse: float = 0.0

    def capacity(self, slo: float) -> float:
        if self.support and slo < min(L for L, _ in self.support):
            log.debug("node %d: capacity extrapolated below profiled range (L=%.3g)", self.node, slo)
        return max(0.0, self.k_n * slo + self.b_n)


def profile_capacity(
    probe: Probe,
    latencies: Sequence[float] = DEFAULT_LATENCIES,
    drop_threshold: float = 0.01,
    probe_step: int = 10,
    max_load: int = 1_000_000,
    node: int = 0,
) -> list[tuple[float, int]]:
    """Measure the largest sustainable load E_{n,L} for each SLO in ``latencies``.

    At the first SLO the load ramps up by ``probe_step`` until the drop rate
    exceeds the threshold. Later SLOs start from ``(L / L0) * E_{n,L0}`` and
    climb in steps of ``E_{n,L0}``; if the warm start already fails, the load
    backs off by ``probe_step`` but never below the previous SLO's result.
    """
    ok = lambda q, L: probe(q, L) <= drop_threshold
    lat = list(latencies)
    L0 = lat[0]
    e0 = 0
    while e0 + probe_step <= max_load and ok(e0 + probe_step, L0):
        e0 += probe_step
    if e0 == 0:
        log.warning("node %d sustains no load at L=%g; recording zero capacity", node, L0)
    points = [(float(L0), e0)]
    prev = e0
    for L in lat[1:]:
        if e0 == 0:
            # nothing to scale from: repeat the fine ramp
            e = prev
            while e + probe_step <= max_load and ok(e + probe_step, L):
                e += probe_step
        else:
            e = int(round(L / L0 * e0))
            if ok(e, L):
                while e + e0 <= max_load and ok(e + e0, L):
                    e += e0
            else:
                while e > prev and not ok(e, L):
                    e -= probe_step
        e = max(e, prev)
        points.append((float(L), e))
        prev = e
    return points


def fit_capacity(points: Sequence[tuple[float, float]], node: int = 0) -> CapacityModel:
    """Ordinary least squares of E on L."""
    L = np.array([p[0] for p in points], dtype=float)
    E = np.array([p[1] for p in points], dtype=float)
    if len(L) < 2 or np.ptp(L) == 0:
        raise ValueError("fit_capacity needs at least two distinct latency values")
    A = np.column_stack([L, np.ones_like(L)])
    (k, b), *_ = np.linalg.lstsq(A, E, rcond=None)
    rmse = float(np.sqrt(np.mean((A @ [k, b] - E) ** 2)))
    return CapacityModel(node, float(k), float(b), tuple((float(a), float(c)) for a, c in zip(L, E)), rmse)


def save_profiles(path: str | Path, models: Sequence[CapacityModel]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "L_s", "E_nL", "k_n", "b_n", "rmse"])
        for m in models:
            for L, E in m.support:
                w.writerow([m.node, repr(L), repr(E), repr(m.k_n), repr(m.b_n), repr(m.rmse)])


def load_profiles(path: str | Path) -> list[CapacityModel]:
    rows: dict[int, list[dict]] = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(int(r["node_id"]), []).append(r)
    out = []
    for node in sorted(rows):
        rs = rows[node]
        out.append(
            CapacityModel(
                node,
                float(rs[0]["k_n"]),
                float(rs[0]["b_n"]),
                tuple((float(r["L_s"]), float(r["E_nL"])) for r in rs),
                float(rs[0]["rmse"]),
            )
        )
    return out


# ---------------------------------------------------------------- allocation


@dataclass
class AllocationResult:
    assignments: np.ndarray
    counts: np.ndarray
    proportions: np.ndarray
    scaled: bool
    adjusted_capacities: np.ndarray
    overflow: int = 0
    reassigned: int = 0
    sampled: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))


def _pick(cdf_row: np.ndarray, u: float) -> int:
    return int(np.searchsorted(cdf_row, u, side="right"))


def _cdf(p: np.ndarray) -> np.ndarray:
    cs = np.cumsum(p, axis=-1)
    return cs / cs[..., -1:]


def allocate(
    b_t: int,
    prob_vectors,
    capacities: Sequence[float],
    rng: np.random.Generator,
    *,
    capacity_check: bool = True,
) -> AllocationResult:
    """Assign ``b_t`` queries to nodes by sampling their probability vectors under capacity limits.

    With ``capacity_check=False`` every query keeps its first sample.
    """
    C = np.asarray(capacities, dtype=float).copy()
    n = len(C)
    if b_t == 0:
        z = np.zeros(n)
        return AllocationResult(np.zeros(0, dtype=int), z.astype(int), z, False, C)
    P = np.asarray(prob_vectors, dtype=float)
    if P.shape != (b_t, n):
        raise ValueError(f"expected {b_t} probability vectors over {n} nodes, got {P.shape}")
    if np.any(C < 0):
        raise ValueError("capacities must be >= 0")
    scaled = False
    if capacity_check:
        total = C.sum()
        if total <= 0:
            raise ValueError("at least one node needs positive capacity")
        if b_t > total:
            C = C + (C / total) * (b_t - total)
            scaled = True

    cdf = _cdf(P)
    u = rng.random((b_t, 2))
    q = np.zeros(n, dtype=int)
    a = np.full(b_t, -1, dtype=int)
    first = np.empty(b_t, dtype=int)
    overflow = reassigned = 0
    for i in range(b_t):
        j = _pick(cdf[i], u[i, 0])
        first[i] = j
        if capacity_check and q[j] >= C[j]:
            avail = q < C
            if avail.any():
                s = np.where(avail, P[i], 0.0)
                if s.sum() <= 0:
                    # the sampled distribution has no mass on open nodes: spread evenly
                    s = avail.astype(float)
                j = _pick(_cdf(s), u[i, 1])
                reassigned += 1
            else:
                j = int(np.argmax(C - q))
                overflow += 1
        q[j] += 1
        a[i] = j
    if overflow:
        log.warning("allocation overflow: %d queries placed on full nodes", overflow)
    return AllocationResult(a, q, q / b_t, scaled, C, overflow, reassigned, first)


def node_share_from_result(result: AllocationResult) -> np.ndarray:
    total = int(result.counts.sum())
    if total == 0:
        return np.zeros(len(result.counts))
    return result.counts / total


def integer_capacities(models: Sequence[CapacityModel], slo: float) -> np.ndarray:
    """Per-node C_n(L) floored to whole queries."""
    return np.array([math.floor(m.capacity(slo) + 1e-9) for m in models], dtype=float)
