"""Latency surfaces over (query count, memory fraction) and their least-squares fits."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

FAMILIES = ("linear", "quadratic", "exponential", "cubic")
FEAS_TOL = 1e-9

# (i, j) exponents of q**i * R**j for the full cubic
_CUBIC_TERMS = [(i, j) for i in range(4) for j in range(4) if i + j <= 3]


@dataclass(frozen=True)
class LatencyModel:
    """``coeffs`` layout depends on ``family``; quadratic is (a, b, c, d, e)."""

    coeffs: tuple[float, ...]
    delta_t_s: float = 0.0
    family: str = "quadratic"
    fit_rmse: float = 0.0
    fit_nrmse: float = 0.0
    q_scale: float = 1.0
    model_id: int = -1

    @classmethod
    def quadratic(cls, a, b, c, d, e, delta_t_s=0.0, **kw) -> "LatencyModel":
        return cls((float(a), float(b), float(c), float(d), float(e)), float(delta_t_s), "quadratic", **kw)


def _surface(family: str, coeffs, q, R):
    q = np.asarray(q, dtype=float)
    R = np.asarray(R, dtype=float)
    if family == "quadratic":
        a, b, c, d, e = coeffs
        return (a * q - b * R) ** 2 + c * q + d * R + e
    if family == "linear":
        al, be, ga = coeffs
        return al * q + be * R + ga
    if family == "exponential":
        al, be, ga, de = coeffs
        return al * np.exp(np.clip(be * q + ga * R, -700, 700)) + de
    if family == "cubic":
        return sum(cf * q**i * R**j for cf, (i, j) in zip(coeffs, _CUBIC_TERMS))
    raise ValueError(f"unknown latency family {family!r}")


def predict_latency(lm: LatencyModel, q, R):
    """Predicted processing seconds (including the offset ΔT), clamped at 0."""
    q_arr = np.asarray(q, dtype=float)
    R_arr = np.asarray(R, dtype=float)
    if np.any((q_arr > 0) & (R_arr <= 0)):
        raise ValueError("a model with no memory cannot serve queries")
    out = np.maximum(_surface(lm.family, lm.coeffs, q_arr * lm.q_scale, R_arr) + lm.delta_t_s, 0.0)
    return float(out) if out.ndim == 0 else out


def servable_range(lm: LatencyModel, R, budget):
    """Integer bounds ``(lo, hi)`` of query counts meeting ``latency <= budget`` (vectorised).

    The quadratic surface is convex in q, so the feasible set is an interval;
    ``hi = -1`` marks no feasible positive count.
    """
    if lm.family != "quadratic":
        raise ValueError("servable_range needs the quadratic family")
    a, b, c, d, e = lm.coeffs
    s = lm.q_scale
    R = np.asarray(R, dtype=float)
    budget = np.asarray(budget, dtype=float)
    R, budget = np.broadcast_arrays(R, budget)
    A = (a * s) ** 2
    B = c * s - 2 * a * s * b * R
    C = (b * R) ** 2 + d * R + e + lm.delta_t_s - budget
    hi = np.full(R.shape, -1.0)
    lo = np.zeros(R.shape)
    if A > 0:
        disc = B * B - 4 * A * C
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        r1 = (-B - sq) / (2 * A)
        r2 = (-B + sq) / (2 * A)
        hi = np.where(ok, np.floor(r2 + 1e-9), -1.0)
        lo = np.where(ok, np.maximum(np.ceil(r1 - 1e-9), 0.0), 0.0)
    else:
        # linear in q: B*q + C <= 0
        B = np.broadcast_to(B, R.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            root = np.where(B != 0, -C / np.where(B != 0, B, 1.0), 0.0)
        hi = np.where(B > 0, np.floor(root + 1e-9), np.where((B < 0) | (C <= 0), 1e12, -1.0))
        lo = np.where(B < 0, np.maximum(np.ceil(root - 1e-9), 0.0), 0.0)
    hi = np.minimum(hi, 1e12)
    # guard the floor/ceil against rounding with the exact predicate
    for _ in range(2):
        over = (hi >= 1) & (_lat(lm, hi, R) > budget + FEAS_TOL)
        hi = np.where(over, hi - 1, hi)
        under = (lo <= hi) & (lo >= 1) & (_lat(lm, lo, R) > budget + FEAS_TOL)
        lo = np.where(under, lo + 1, lo)
    hi = np.where(hi < np.maximum(lo, 1), -1.0, hi)
    return lo.astype(np.int64), hi.astype(np.int64)


def _lat(lm, q, R):
    return np.maximum(_surface(lm.family, lm.coeffs, np.asarray(q, float) * lm.q_scale, R) + lm.delta_t_s, 0.0)


# ---------------------------------------------------------------- fitting


class FitError(ValueError):
    pass


def _design(q, R, terms):
    return np.column_stack([q**i * R**j for i, j in terms])


def _lstsq_scaled(X, y):
    scale = np.abs(X).max(axis=0)
    scale[scale == 0] = 1.0
    coef, *_ = np.linalg.lstsq(X / scale, y, rcond=None)
    return coef / scale


def fit_latency(samples: Sequence[Sequence[float]], family: str = "quadratic", delta_t_s: float = 0.0,
                model_id: int = -1) -> LatencyModel:
    """Least-squares fit of one latency family to ``(q, R, seconds)`` rows."""
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise FitError("samples must be rows of (q, R, seconds)")
    if len(arr) < 6:
        raise FitError(f"need at least 6 samples, got {len(arr)}")
    q, R, y = arr.T
    if len(np.unique(q)) < 3:
        raise FitError("rank-deficient design: need at least 3 distinct query counts")
    if len(np.unique(R)) < 3:
        raise FitError("rank-deficient design: need at least 3 distinct memory fractions")

    if family == "linear":
        coeffs = tuple(_lstsq_scaled(_design(q, R, [(1, 0), (0, 1), (0, 0)]), y))
    elif family == "cubic":
        coeffs = tuple(_lstsq_scaled(_design(q, R, _CUBIC_TERMS), y))
    elif family == "quadratic":
        coeffs = _fit_quadratic(q, R, y)
    elif family == "exponential":
        coeffs = _fit_exponential(q, R, y)
    else:
        raise FitError(f"unknown latency family {family!r}")

    resid = _surface(family, coeffs, q, R) - y
    rmse = float(np.sqrt(np.mean(resid**2)))
    span = float(np.ptp(y))
    nrmse = rmse / span if span > 0 else 0.0
    return LatencyModel(tuple(float(c) for c in coeffs), float(delta_t_s), family, rmse, nrmse, 1.0, model_id)


def _fit_quadratic(q, R, y):
    # unconstrained quadratic gives one start point; a=b=0 is a saddle of the rank-one
    # form, so a few starts away from it are tried as well and the best fit kept
    A2, AB, B2, c, d, e = _lstsq_scaled(_design(q, R, [(2, 0), (1, 1), (0, 2), (1, 0), (0, 1), (0, 0)]), y)
    a0 = np.sqrt(max(A2, 1e-12))
    b0 = -AB / (2 * a0) if A2 > 1e-12 else np.sqrt(max(B2, 0.0))
    qs = max(np.abs(q).max(), 1.0)
    starts = [np.array([a0, b0, c, d, e])]
    for ua, ub in ((0.5, 0.5), (1.0, 0.25), (0.25, 1.0)):
        starts.append(np.array([ua / qs, ub, c, d, e]))

    def resid(p):
        return _surface("quadratic", p, q, R) - y

    def jac(p):
        a, b = p[0], p[1]
        u = a * q - b * R
        return np.column_stack([2 * u * q, -2 * u * R, q, R, np.ones_like(q)])

    best = None
    for x0 in starts:
        sol = least_squares(resid, x0, jac=jac, method="lm", xtol=1e-15, ftol=1e-15, gtol=1e-15,
                            x_scale=np.array([1 / qs, 1.0, 1 / qs, 1.0, 1.0]), max_nfev=20000)
        if best is None or sol.cost < best.cost - 1e-15:
            best = sol
    a, b, c, d, e = best.x
    if a < 0:
        a, b = -a, -b
    return (a, b, c, d, e)


def _fit_exponential(q, R, y):
    span = max(np.ptp(y), 1e-12)
    best = None
    for frac in (1e-3, 1e-2, 0.05, 0.2, 0.5):
        shift = y.min() - frac * span
        z = np.log(y - shift)
        lc, be, ga = _lstsq_scaled(_design(q, R, [(0, 0), (1, 0), (0, 1)]), z)
        p = np.array([np.exp(lc), be, ga, shift])
        try:
            sol = least_squares(lambda p: _surface("exponential", p, q, R) - y, p, method="trf", max_nfev=5000)
            p = sol.x
        except ValueError:
            pass
        err = np.mean((_surface("exponential", p, q, R) - y) ** 2)
        if np.isfinite(err) and (best is None or err < best[0]):
            best = (err, p)
    return tuple(best[1])


# ---------------------------------------------------------------- store


STORE_FIELDS = ["model_id", "family", "a", "b", "c", "d", "e", "delta_t_s", "rmse", "nrmse", "coeffs"]


def save_latency_store(path: str | Path, models: Sequence[LatencyModel]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STORE_FIELDS)
        for m in models:
            abcde = list(m.coeffs) if m.family == "quadratic" else [""] * 5
            w.writerow([m.model_id, m.family, *[repr(x) if x != "" else "" for x in abcde],
                        repr(m.delta_t_s), repr(m.fit_rmse), repr(m.fit_nrmse),
                        " ".join(repr(c) for c in m.coeffs)])


def load_latency_store(path: str | Path) -> list[LatencyModel]:
    out = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            coeffs = tuple(float(x) for x in r["coeffs"].split())
            out.append(LatencyModel(coeffs, float(r["delta_t_s"]), r["family"], float(r["rmse"]),
                                    float(r["nrmse"]), 1.0, int(r["model_id"])))
    return out


def synth_latency_samples(true: LatencyModel, rng: np.random.Generator, n: int = 60,
                          noise: float = 0.05, q_max: int = 400, r_min: float = 0.1) -> np.ndarray:
    """Benchmark-style samples on a (q, R) grid with multiplicative Gaussian noise."""
    qs = np.linspace(0, q_max, 10).round()
    Rs = np.linspace(r_min, 1.0, 9)
    grid = np.array([(a, b) for a in qs for b in Rs])
    pick = grid[rng.choice(len(grid), size=min(n, len(grid)), replace=False)]
    base = _surface(true.family, true.coeffs, pick[:, 0], pick[:, 1])
    y = base * (1 + noise * rng.standard_normal(len(pick)))
    return np.column_stack([pick, y])
