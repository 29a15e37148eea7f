"""Per-model deployment transitions between consecutive slots and the GPU loading time."""

from __future__ import annotations

from typing import Mapping, Sequence


def unload_state(d_prev: int, d_cur: int) -> int:
    return (1 - d_cur) * d_prev


def load_state(d_prev: int, d_cur: int) -> int:
    return d_cur * (1 - d_prev)


def resource_change(r_prev: float, r_cur: float, eps1: float) -> int:
    return int(abs(r_cur - r_prev) > eps1)


def reload_state(rc: int, ld: int, uld: int) -> int:
    return int(rc == 1 and ld == 0 and uld == 0)


def bigm_rc_feasible(r_prev: float, r_cur: float, rc: int, eps1: float, big_m: float) -> bool:
    """Whether ``rc`` satisfies the four printed big-M inequalities for this change.

    Kept for auditing only: with ``rc = 1`` the two lower bounds demand both
    ``r_prev - r_cur >= eps1`` and ``r_cur - r_prev >= eps1``, which no pair satisfies.
    """
    lhs1 = r_prev - r_cur <= eps1 + big_m * rc
    lhs2 = r_cur - r_prev <= eps1 + big_m * rc
    lhs3 = r_prev - r_cur >= eps1 - big_m * (1 - rc)
    lhs4 = r_cur - r_prev >= eps1 - big_m * (1 - rc)
    return bool(lhs1 and lhs2 and lhs3 and lhs4)


def transition_flags(d_prev: int, d_cur: int, r_prev: float, r_cur: float, eps1: float) -> dict[str, int]:
    uld = unload_state(d_prev, d_cur)
    ld = load_state(d_prev, d_cur)
    rc = resource_change(r_prev, r_cur, eps1)
    return {"uld": uld, "ld": ld, "rc": rc, "rld": reload_state(rc, ld, uld)}


def loading_time(
    prev: Mapping[int, tuple[int, float]],
    cur: Mapping[int, tuple[int, float]],
    load_times: Mapping[int, float] | Sequence[float],
    eps1: float,
) -> float:
    """Serialized loading seconds on one GPU: sum of l_m over fresh loads and reloads.

    ``prev`` / ``cur`` map model id to ``(d, R)``; missing ids count as undeployed.
    """
    total = 0.0
    for m in set(prev) | set(cur):
        dp, rp = prev.get(m, (0, 0.0))
        dc, rcur = cur.get(m, (0, 0.0))
        f = transition_flags(dp, dc, rp, rcur, eps1)
        total += (f["ld"] + f["rld"]) * load_times[m]
    return total


def loading_time_indicator(
    prev: Mapping[int, tuple[int, float]],
    cur: Mapping[int, tuple[int, float]],
    load_times: Mapping[int, float] | Sequence[float],
    eps1: float,
) -> float:
    """Same total from the indicator form: 1[R changed] * (1 - ULD) * l_m."""
    total = 0.0
    for m in set(prev) | set(cur):
        dp, rp = prev.get(m, (0, 0.0))
        dc, rcur = cur.get(m, (0, 0.0))
        changed = abs(rcur - rp) > eps1
        total += changed * (1 - unload_state(dp, dc)) * load_times[m]
    return total
