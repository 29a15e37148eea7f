"""Policy-only PPO on standardised feedback, with a threshold-triggered buffer."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..core import PPOConfig
from .metrics import normalize_batch
from .policy import PolicyParams, _forward, surrogate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeedbackRecord:
    embedding: np.ndarray
    chosen_node: int
    behavior_log_prob: float
    raw_quality: float
    slot: int = 0

    def __post_init__(self):
        if self.behavior_log_prob > 0:
            raise ValueError("behavior_log_prob must be <= 0")
        if self.raw_quality < 0:
            raise ValueError("raw_quality must be >= 0")


@dataclass
class FeedbackBuffer:
    threshold: int
    records: list[FeedbackRecord] = field(default_factory=list)
    last_stats: "UpdateStats | None" = None

    def __len__(self):
        return len(self.records)

    def ready(self) -> bool:
        return len(self.records) >= self.threshold


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def ascend(self, weights: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for k, g in grads.items():
            m = self.m.get(k)
            if m is None:
                m = self.m[k] = np.zeros_like(g)
                self.v[k] = np.zeros_like(g)
            v = self.v[k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            weights[k] += self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class UpdateStats:
    batch_size: int = 0
    mean_f: float = 0.0
    mean_fbar: float = 0.0
    entropy: float = 0.0
    surrogate: float = 0.0
    clip_fraction: float = 0.0
    aborted: bool = False


def ppo_update(
    params: PolicyParams,
    records: list[FeedbackRecord],
    clip_eps: float,
    entropy_beta: float,
    lr: float,
    epochs: int,
    *,
    minibatch_size: int = 0,
    norm_c: float = 1e-8,
    rng: np.random.Generator | None = None,
    optimizer: Adam | None = None,
    advantages: np.ndarray | None = None,
) -> tuple[PolicyParams, UpdateStats]:
    """Run ``epochs`` passes of gradient ascent on the clipped objective.

    The policy is evaluated with its running normalisation statistics, the same
    mode that produced the behaviour log-probs, so every ratio starts at 1 and
    only moves with the weights. The statistics are refreshed once, from the
    whole buffer, after the last epoch. ``advantages`` bypasses
    reward standardisation (used by tests). Returns the input params untouched
    if any gradient goes non-finite.
    """
    if not records:
        raise ValueError("ppo_update needs at least one record")
    x = np.stack([r.embedding for r in records]).astype(float)
    actions = np.array([r.chosen_node for r in records])
    old = np.array([r.behavior_log_prob for r in records], dtype=float)
    raw = np.array([r.raw_quality for r in records], dtype=float)
    adv = normalize_batch(raw, norm_c) if advantages is None else np.asarray(advantages, float)

    new = params.copy()
    opt = optimizer if optimizer is not None else Adam(lr)
    opt.lr = lr
    n = len(records)
    mb = n if minibatch_size <= 0 else min(minibatch_size, n)
    stats = UpdateStats(batch_size=n, mean_f=float(raw.mean()), mean_fbar=float(adv.mean()))
    clip_hits = 0
    for _ in range(epochs):
        order = np.arange(n) if (mb == n or rng is None) else rng.permutation(n)
        for start in range(0, n, mb):
            sel = order[start : start + mb]
            out = surrogate(new, x[sel], actions[sel], old[sel], adv[sel], clip_eps, entropy_beta, train=False)
            if not all(np.all(np.isfinite(g)) for g in out.grads.values()):
                log.warning("non-finite PPO gradient; update aborted")
                stats.aborted = True
                return params, stats
            opt.ascend(new.weights, out.grads)
            clip_hits += int(np.sum(np.abs(out.ratios - 1) > clip_eps))
            stats.surrogate, stats.entropy = out.surrogate, out.entropy
    if n > 1:
        _, _, batch_stats = _forward(new, x, train=False)
        mom = new.momentum
        for l, (mu, var) in enumerate(batch_stats):
            new.running[f"m{l}"] = (1 - mom) * new.running[f"m{l}"] + mom * mu
            new.running[f"v{l}"] = (1 - mom) * new.running[f"v{l}"] + mom * var
    if not new.all_finite():
        log.warning("non-finite parameters after PPO update; update discarded")
        stats.aborted = True
        return params, stats
    stats.clip_fraction = clip_hits / (epochs * n)
    return new, stats


def record_and_maybe_train(
    buffer: FeedbackBuffer,
    record: FeedbackRecord,
    params: PolicyParams,
    ppo_cfg: PPOConfig,
    *,
    rng: np.random.Generator | None = None,
    optimizer: Adam | None = None,
) -> tuple[FeedbackBuffer, PolicyParams, bool]:
    buffer.records.append(record)
    if not buffer.ready():
        return buffer, params, False
    new, stats = ppo_update(
        params,
        buffer.records,
        ppo_cfg.clip_eps,
        ppo_cfg.entropy_beta,
        ppo_cfg.lr,
        ppo_cfg.epochs_per_update,
        minibatch_size=ppo_cfg.minibatch_size,
        norm_c=ppo_cfg.norm_c,
        rng=rng,
        optimizer=optimizer,
    )
    log.info(
        "ppo update slot=%d batch=%d mean_f=%.4f mean_fbar=%.2e entropy=%.4f surrogate=%.5f",
        record.slot,
        stats.batch_size,
        stats.mean_f,
        stats.mean_fbar,
        stats.entropy,
        stats.surrogate,
    )
    buffer.records = []
    buffer.last_stats = stats
    return buffer, new, True
