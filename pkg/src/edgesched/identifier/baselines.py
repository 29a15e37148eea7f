"""Routing baselines: uniform random, disjoint LinUCB, and the corpus-aware oracle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def random_probs(batch_size: int, n_nodes: int) -> np.ndarray:
    return np.full((batch_size, n_nodes), 1.0 / n_nodes)


def one_hot(nodes: np.ndarray, n_nodes: int) -> np.ndarray:
    out = np.zeros((len(nodes), n_nodes))
    out[np.arange(len(nodes)), nodes] = 1.0
    return out


@dataclass
class LinUCBState:
    """Per-arm ridge statistics; ``a_inv`` is kept current with Sherman-Morrison."""

    a_inv: np.ndarray  # (N, D, D)
    b: np.ndarray  # (N, D)

    @classmethod
    def create(cls, n_nodes: int, dim: int) -> "LinUCBState":
        return cls(np.tile(np.eye(dim), (n_nodes, 1, 1)), np.zeros((n_nodes, dim)))

    @property
    def theta(self) -> np.ndarray:
        return np.einsum("nij,nj->ni", self.a_inv, self.b)


def linucb_scores(state: LinUCBState, embeddings: np.ndarray, ucb_alpha: float) -> np.ndarray:
    x = np.atleast_2d(embeddings)
    mean = x @ state.theta.T
    width = np.sqrt(np.maximum(np.einsum("bi,nij,bj->bn", x, state.a_inv, x), 0.0))
    return mean + ucb_alpha * width


def linucb_choose_batch(state: LinUCBState, embeddings: np.ndarray, ucb_alpha: float = 1.0) -> np.ndarray:
    # argmax returns the first maximum, i.e. lowest node id on ties
    return np.argmax(linucb_scores(state, embeddings, ucb_alpha), axis=1)


def linucb_choose(state: LinUCBState, embedding: np.ndarray, ucb_alpha: float = 1.0) -> int:
    return int(linucb_choose_batch(state, np.asarray(embedding)[None, :], ucb_alpha)[0])


def linucb_update(state: LinUCBState, embedding: np.ndarray, node: int, reward: float) -> LinUCBState:
    x = np.asarray(embedding, dtype=float)
    ai = state.a_inv[node]
    ax = ai @ x
    state.a_inv[node] = ai - np.outer(ax, ax) / (1.0 + x @ ax)
    state.b[node] += reward * x
    return state


def expected_quality_matrix(affinity: np.ndarray, node_quality: np.ndarray, hit_gain: float,
                            miss_floor: float, alpha1: float, alpha2: float) -> np.ndarray:
    """Expected composite feedback per (domain, node) under the planted retrieval model."""
    hit = np.minimum(node_quality * hit_gain, 1.0)
    miss = np.minimum(node_quality * miss_floor, 1.0)
    return (alpha1 + alpha2) * (affinity * hit[None, :] + (1 - affinity) * miss[None, :])


def oracle_route(domains, expected_quality: np.ndarray) -> np.ndarray:
    """Best node per query by expected quality of its true domain; ties go to the lowest id."""
    return np.argmax(expected_quality[np.asarray(domains)], axis=1)
