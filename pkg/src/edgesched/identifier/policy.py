"""Feed-forward routing policy (256-128-64-N) with batch norm and projected residuals.

Pure numpy with hand-written backprop; ``tests/test_policy.py`` checks the
gradients against central finite differences.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..core import ProbVector

HIDDEN = (256, 128, 64)
BN_EPS = 1e-5
CHECKPOINT_VERSION = 1


@dataclass
class PolicyParams:
    weights: dict[str, np.ndarray]
    running: dict[str, np.ndarray]
    in_dim: int
    n_out: int
    momentum: float = 0.1

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            {k: v.copy() for k, v in self.weights.items()},
            {k: v.copy() for k, v in self.running.items()},
            self.in_dim,
            self.n_out,
            self.momentum,
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.weights.values()) and all(
            np.all(np.isfinite(v)) for v in self.running.values()
        )


def init_policy(in_dim: int, n_out: int, rng: np.random.Generator, out_gain: float = 0.01) -> PolicyParams:
    """He-normal hidden layers, near-zero output layer so the initial policy is almost uniform."""
    dims = (in_dim, *HIDDEN)
    w: dict[str, np.ndarray] = {}
    r: dict[str, np.ndarray] = {}
    for l in range(3):
        fan_in, fan_out = dims[l], dims[l + 1]
        w[f"W{l}"] = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        w[f"b{l}"] = np.zeros(fan_out)
        w[f"g{l}"] = np.ones(fan_out)
        w[f"be{l}"] = np.zeros(fan_out)
        r[f"m{l}"] = np.zeros(fan_out)
        r[f"v{l}"] = np.ones(fan_out)
        if l > 0:
            w[f"P{l}"] = rng.standard_normal((fan_in, fan_out)) * np.sqrt(1.0 / fan_in)
    w["W3"] = rng.standard_normal((HIDDEN[-1], n_out)) * (out_gain / np.sqrt(HIDDEN[-1]))
    w["b3"] = np.zeros(n_out)
    return PolicyParams(w, r, in_dim, n_out)


def _forward(params: PolicyParams, x: np.ndarray, train: bool):
    w, run = params.weights, params.running
    h = x
    layers = []
    batch_stats = []
    for l in range(3):
        z = h @ w[f"W{l}"] + w[f"b{l}"]
        batch_stats.append((z.mean(axis=0), z.var(axis=0)))
        mu, var = batch_stats[-1] if train else (run[f"m{l}"], run[f"v{l}"])
        inv = 1.0 / np.sqrt(var + BN_EPS)
        xhat = (z - mu) * inv
        n = w[f"g{l}"] * xhat + w[f"be{l}"]
        a = np.maximum(n, 0.0)
        out = a + h @ w[f"P{l}"] if l > 0 else a
        layers.append((h, xhat, inv, n > 0))
        h = out
    logits = h @ w["W3"] + w["b3"]
    return logits, (layers, h), batch_stats


def _backward(params: PolicyParams, cache, dlogits: np.ndarray, train: bool) -> dict[str, np.ndarray]:
    w = params.weights
    layers, h_top = cache
    g: dict[str, np.ndarray] = {}
    g["W3"] = h_top.T @ dlogits
    g["b3"] = dlogits.sum(axis=0)
    dh = dlogits @ w["W3"].T
    bsz = dlogits.shape[0]
    for l in (2, 1, 0):
        h_in, xhat, inv, mask = layers[l]
        d_res = None
        if l > 0:
            g[f"P{l}"] = h_in.T @ dh
            d_res = dh @ w[f"P{l}"].T
        dn = dh * mask
        g[f"g{l}"] = (dn * xhat).sum(axis=0)
        g[f"be{l}"] = dn.sum(axis=0)
        dxhat = dn * w[f"g{l}"]
        if train:
            dz = (inv / bsz) * (bsz * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dz = dxhat * inv
        g[f"W{l}"] = h_in.T @ dz
        g[f"b{l}"] = dz.sum(axis=0)
        dh = dz @ w[f"W{l}"].T
        if d_res is not None:
            dh = dh + d_res
    return g


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def policy_log_probs(params: PolicyParams, embeddings: np.ndarray) -> np.ndarray:
    """Inference-mode log-probabilities for a batch of embeddings, shape (B, N)."""
    x = np.atleast_2d(np.asarray(embeddings, dtype=float))
    if x.shape[1] != params.in_dim:
        raise ValueError(f"embedding dim {x.shape[1]} != policy input dim {params.in_dim}")
    logits, _, _ = _forward(params, x, train=False)
    return log_softmax(logits)


def policy_probs(params: PolicyParams, embeddings: np.ndarray) -> np.ndarray:
    p = np.exp(policy_log_probs(params, embeddings))
    return p / p.sum(axis=1, keepdims=True)


def policy_forward(params: PolicyParams, embedding: np.ndarray) -> ProbVector:
    return ProbVector(policy_probs(params, embedding)[0])


def sample_nodes(probs: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-CDF sampling, one node per row; returns (nodes, log_probs)."""
    p = np.atleast_2d(probs)
    cs = np.cumsum(p, axis=1)
    cs = cs / cs[:, -1:]
    u = rng.random(p.shape[0])
    nodes = (u[:, None] >= cs).sum(axis=1)
    with np.errstate(divide="ignore"):
        logp = np.log(p[np.arange(len(nodes)), nodes])
    return nodes, logp


def sample_node(probs, rng: np.random.Generator) -> tuple[int, float]:
    p = probs.probs if isinstance(probs, ProbVector) else np.asarray(probs, dtype=float)
    nodes, logp = sample_nodes(p[None, :], rng)
    return int(nodes[0]), float(logp[0])


# ------------------------------------------------------------- PPO objective


@dataclass
class SurrogateOut:
    value: float
    surrogate: float
    entropy: float
    ratios: np.ndarray
    grads: dict[str, np.ndarray] = field(repr=False, default_factory=dict)
    batch_stats: list = field(repr=False, default_factory=list)


def surrogate(
    params: PolicyParams,
    x: np.ndarray,
    actions: np.ndarray,
    old_logp: np.ndarray,
    adv: np.ndarray,
    clip_eps: float,
    entropy_beta: float,
    train: bool = True,
    need_grad: bool = True,
) -> SurrogateOut:
    """Clipped policy-only objective ``mean(min(rho*A, clip(rho)*A)) + beta*mean(H)``."""
    bsz = x.shape[0]
    logits, cache, stats = _forward(params, x, train)
    logp_all = log_softmax(logits)
    p = np.exp(logp_all)
    idx = np.arange(bsz)
    ratio = np.exp(logp_all[idx, actions] - old_logp)
    clipped = np.clip(ratio, 1 - clip_eps, 1 + clip_eps)
    unc, clp = ratio * adv, clipped * adv
    surr = np.minimum(unc, clp)
    ent = -(p * logp_all).sum(axis=1)
    out = SurrogateOut(
        value=float(surr.mean() + entropy_beta * ent.mean()),
        surrogate=float(surr.mean()),
        entropy=float(ent.mean()),
        ratios=ratio,
        batch_stats=stats,
    )
    if need_grad:
        coef = np.where(unc <= clp, adv * ratio, 0.0)
        d = -coef[:, None] * p
        d[idx, actions] += coef
        d += entropy_beta * (-p * (logp_all + ent[:, None]))
        out.grads = _backward(params, cache, d / bsz, train)
    return out


# ------------------------------------------------------------- checkpoints


def save_checkpoint(path: str | Path, params: PolicyParams, cfg_hash: str) -> None:
    meta = {
        "version": CHECKPOINT_VERSION,
        "config_hash": cfg_hash,
        "in_dim": params.in_dim,
        "n_out": params.n_out,
        "momentum": params.momentum,
    }
    arrays = {f"w:{k}": v for k, v in params.weights.items()}
    arrays.update({f"r:{k}": v for k, v in params.running.items()})
    buf = io.BytesIO()
    np.savez(buf, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8), **arrays)
    Path(path).write_bytes(buf.getvalue())


class CheckpointMismatch(RuntimeError):
    pass


def load_checkpoint(path: str | Path, cfg_hash: str) -> PolicyParams:
    with np.load(path) as z:
        meta = json.loads(z["meta"].tobytes().decode())
        if meta["version"] != CHECKPOINT_VERSION:
            raise CheckpointMismatch(f"checkpoint version {meta['version']} unsupported")
        if meta["config_hash"] != cfg_hash:
            raise CheckpointMismatch(
                f"checkpoint config hash {meta['config_hash']} != current {cfg_hash}"
            )
        w = {k[2:]: z[k].copy() for k in z.files if k.startswith("w:")}
        r = {k[2:]: z[k].copy() for k in z.files if k.startswith("r:")}
    return PolicyParams(w, r, meta["in_dim"], meta["n_out"], meta["momentum"])
