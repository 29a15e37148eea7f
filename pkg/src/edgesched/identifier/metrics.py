"""Response-quality scores used as identifier feedback."""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)


def lcs_length(a: Sequence, b: Sequence) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(ref_tokens: Sequence, gen_tokens: Sequence) -> float:
    """LCS length normalised by the longer sequence."""
    if len(ref_tokens) == 0 or len(gen_tokens) == 0:
        log.warning("rouge_l called with an empty token sequence; returning 0")
        return 0.0
    return lcs_length(ref_tokens, gen_tokens) / max(len(ref_tokens), len(gen_tokens))


def _unit_rows(m: np.ndarray) -> np.ndarray:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)


def bertscore(ref_embs: np.ndarray, gen_embs: np.ndarray) -> float:
    """Harmonic mean of greedy-matched cosine precision and recall."""
    ref, gen = _unit_rows(ref_embs), _unit_rows(gen_embs)
    if ref.shape[0] == 0 or gen.shape[0] == 0:
        raise ValueError("bertscore needs non-empty embedding matrices")
    sim = gen @ ref.T
    prec = sim.max(axis=1).mean()
    rec = sim.max(axis=0).mean()
    if prec + rec == 0:
        return 0.0
    return float(2 * prec * rec / (prec + rec))


def composite_score(f_r, f_b, alpha1: float = 1.0, alpha2: float = 0.5):
    return alpha1 * f_r + alpha2 * f_b


def normalize_batch(raw, c: float = 1e-8) -> np.ndarray:
    """Standardise a feedback batch with its mean and population std."""
    x = np.asarray(raw, dtype=float)
    if x.size == 0:
        raise ValueError("normalize_batch needs at least one value")
    # std of a constant batch can come out as roundoff, which Adam would amplify
    if np.all(x == x.flat[0]):
        return np.zeros_like(x)
    return (x - x.mean()) / (x.std() + c)
