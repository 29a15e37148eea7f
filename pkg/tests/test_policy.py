import numpy as np
import pytest
from hypothesis import given, strategies as st

from edgesched.core import rng_stream
from edgesched.identifier import (
    init_policy,
    load_checkpoint,
    policy_forward,
    policy_log_probs,
    policy_probs,
    sample_node,
    save_checkpoint,
    surrogate,
)
from edgesched.identifier.policy import CheckpointMismatch


@pytest.fixture(scope="module")
def params():
    return init_policy(32, 4, rng_stream(0, "policy-init"))


def test_fresh_policy_is_near_uniform(params):
    x = rng_stream(1, "x").standard_normal((1000, 32))
    p = policy_probs(params, x)
    assert np.all(p.max(axis=1) - p.min(axis=1) < 0.2)


def test_forward_is_deterministic_and_normalised(params):
    e = rng_stream(2, "x").standard_normal(32)
    a, b = policy_forward(params, e), policy_forward(params, e)
    assert np.array_equal(a.probs, b.probs)
    assert abs(a.probs.sum() - 1) < 1e-9


def test_forward_fuzz(params):
    rng = rng_stream(3, "x")
    x = rng.standard_normal((100_000, 32)) * rng.choice([0.01, 1, 100], size=(100_000, 1))
    p = policy_probs(params, x)
    assert np.all(p >= 0) and np.allclose(p.sum(axis=1), 1, atol=1e-9)
    lp = policy_log_probs(params, x[:100])
    assert np.all(lp <= 0) and np.all(np.isfinite(lp))


def test_dimension_mismatch(params):
    with pytest.raises(ValueError):
        policy_forward(params, np.zeros(31))


def test_sample_node_examples():
    rng = rng_stream(0, "s")
    for _ in range(50):
        assert sample_node(np.array([0, 0, 1.0, 0]), rng) == (2, 0.0)
    draws = np.array([sample_node(np.full(4, 0.25), rng)[0] for _ in range(100_000)])
    assert np.all(np.abs(np.bincount(draws, minlength=4) / 1e5 - 0.25) <= 0.01)
    p = np.array([0.5, 0.0, 0.5])
    assert 1 not in {sample_node(p, rng)[0] for _ in range(2000)}
    node, lp = sample_node(np.array([0.2, 0.8]), rng)
    assert lp == pytest.approx(np.log([0.2, 0.8][node]))


def _toy(seed):
    rng = rng_stream(seed, "toy")
    params = init_policy(4, 2, rng, out_gain=1.0)
    for k, v in params.weights.items():
        params.weights[k] = v + 0.1 * rng.standard_normal(v.shape)
    for k, v in params.running.items():
        params.running[k] = (v + 0.1 * rng.standard_normal(v.shape)) if k.startswith("m") else v * rng.uniform(0.5, 2, v.shape)
    x = rng.standard_normal((6, 4))
    a = rng.integers(0, 2, 6)
    lp = policy_log_probs(params, x)[np.arange(6), a]
    # mix of ratios inside and outside the clip band, away from its edges
    old = lp + rng.choice([-0.3, -0.005, 0.005, 0.3], size=6)
    adv = rng.standard_normal(6)
    return params, x, a, old, adv


def _numeric_grad(params, args, key, idx, train, h=1e-5):
    w = params.weights[key]
    orig = w[idx]
    w[idx] = orig + h
    up = surrogate(params, *args, train=train, need_grad=False).value
    w[idx] = orig - h
    down = surrogate(params, *args, train=train, need_grad=False).value
    w[idx] = orig
    return (up - down) / (2 * h)


def _worst_rel_error(train, h, floor_scale):
    worst = 0.0
    for seed in range(20):
        params, x, a, old, adv = _toy(seed)
        args = (x, a, old, adv, 0.02, 0.01)
        g = surrogate(params, *args, train=train).grads
        norm = np.sqrt(sum(float((v**2).sum()) for v in g.values()))
        floor = max(1e-6, floor_scale * norm)
        rng = rng_stream(seed, "coords")
        for key in sorted(params.weights):
            w = params.weights[key]
            for _ in range(3):
                idx = tuple(int(rng.integers(s)) for s in w.shape)
                num = _numeric_grad(params, args, key, idx, train, h)
                ana = g[key][idx]
                worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), floor))
    return worst


def test_gradient_matches_finite_differences():
    # the mode used by PPO updates: normalisation with running statistics
    assert _worst_rel_error(train=False, h=1e-5, floor_scale=0.0) < 1e-4


def test_batch_statistics_gradient_matches_finite_differences():
    # batch-norm couples samples and inflates the objective's scale, so the
    # central difference needs a larger step and a norm-relative noise floor
    assert _worst_rel_error(train=True, h=1e-4, floor_scale=1e-6) < 1e-4


def test_surrogate_is_pointwise_min(params):
    rng = rng_stream(4, "x")
    x = rng.standard_normal((64, 32))
    a = rng.integers(0, 4, 64)
    old = policy_log_probs(params, x)[np.arange(64), a] + rng.normal(0, 0.05, 64)
    adv = rng.standard_normal(64)
    out = surrogate(params, x, a, old, adv, 0.02, 0.0, train=False)
    rho = out.ratios
    expected = np.minimum(rho * adv, np.clip(rho, 0.98, 1.02) * adv).mean()
    assert out.surrogate == pytest.approx(expected, abs=1e-12)


def test_clipped_samples_carry_no_ratio_gradient(params):
    rng = rng_stream(5, "x")
    x = rng.standard_normal((8, 32))
    a = rng.integers(0, 4, 8)
    lp = policy_log_probs(params, x)[np.arange(8), a]
    # rho = e^0.5 > 1.02 with positive advantage: clipped term is the min
    out = surrogate(params, x, a, lp - 0.5, np.ones(8), 0.02, 0.0, train=False)
    assert all(np.all(g == 0) for g in out.grads.values())
    # rho < 0.98 with negative advantage: also clipped
    out = surrogate(params, x, a, lp + 0.5, -np.ones(8), 0.02, 0.0, train=False)
    assert all(np.all(g == 0) for g in out.grads.values())


def test_checkpoint_roundtrip(tmp_path, params):
    path = tmp_path / "p.ckpt"
    save_checkpoint(path, params, "abc")
    back = load_checkpoint(path, "abc")
    x = rng_stream(6, "x").standard_normal((5, 32))
    assert np.array_equal(policy_probs(back, x), policy_probs(params, x))
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(path, "other")
