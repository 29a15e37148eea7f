import numpy as np
import pytest
from hypothesis import given, strategies as st

from edgesched.core import rng_stream
from edgesched.workload import (
    TraceError,
    gen_slot_batch,
    load_trace,
    make_prototypes,
    partition_corpora,
)


def protos(layout="random", seed=0, sigma=0.25):
    return make_prototypes(6, 32, sigma, rng_stream(seed, "prototypes"), layout=layout)


@pytest.mark.parametrize("layout", ["random", "paired"])
def test_prototypes_are_unit_and_separable(layout):
    p = protos(layout)
    assert np.allclose(np.linalg.norm(p.vectors, axis=1), 1.0)
    assert p.max_pairwise_cosine() < 0.5


def test_paired_prototypes_are_antipodal():
    v = protos("paired").vectors
    for k in range(3):
        assert np.allclose(v[2 * k], -v[2 * k + 1])
    assert abs(v[0] @ v[2]) < 1e-12


def test_prototype_persistence(tmp_path):
    p = protos()
    p.save(tmp_path / "p.npz")
    back = type(p).load(tmp_path / "p.npz")
    assert np.array_equal(back.vectors, p.vectors) and back.noise_sigma == p.noise_sigma


def test_partition_fully_iid():
    for overlap in (0.0, 0.5, 1.0):
        m = partition_corpora(6, 4, 100, overlap, 3, rng_stream(0, "p"))
        assert np.allclose(m, 1 / 6)


def test_partition_fully_non_iid():
    m = partition_corpora(6, 4, 0, 0.0, 3, rng_stream(0, "p"))
    for row in m:
        assert np.allclose(np.sort(row), [0, 0, 0, 1 / 3, 1 / 3, 1 / 3])


def test_partition_forty_percent_iid():
    m = partition_corpora(6, 4, 40, 0.0, 3, rng_stream(0, "p"))
    # oracle: 0.4/6 everywhere plus 0.6/3 on the primaries
    for row in m:
        vals = np.sort(row)
        assert np.allclose(vals[:3], 0.4 / 6)
        assert np.allclose(vals[3:], 0.4 / 6 + 0.6 / 3)
        assert abs(vals[3] - 0.2667) < 1e-4


def test_partition_explicit_primaries():
    m = partition_corpora(6, 2, 0, 0.0, 2, rng_stream(0, "p"), [(0, 1), (4, 5)])
    assert np.allclose(m[0], [0.5, 0.5, 0, 0, 0, 0]) and np.allclose(m[1], [0, 0, 0, 0, 0.5, 0.5])
    with pytest.raises(ValueError):
        partition_corpora(6, 2, 0, 0.0, 2, rng_stream(0, "p"), [(0, 0), (4, 5)])


def test_partition_rejects_zero_primaries_with_non_iid_share():
    with pytest.raises(ValueError):
        partition_corpora(6, 4, 50, 0.0, 0, rng_stream(0, "p"))


@given(st.integers(1, 10), st.integers(1, 6), st.floats(0, 100), st.floats(0, 1), st.integers(1, 10),
       st.integers(0, 2**31 - 1))
def test_partition_rows_are_distributions(domains, nodes, s, overlap, per_node, seed):
    per_node = min(per_node, domains)
    m = partition_corpora(domains, nodes, s, overlap, per_node, rng_stream(seed, "p"))
    assert m.shape == (nodes, domains)
    assert np.all(m >= 0)
    assert np.allclose(m.sum(axis=1), 1.0, atol=1e-9)


def test_empty_batch():
    b = gen_slot_batch(3, 0, 1.0, protos(), rng_stream(0, "w"))
    assert len(b) == 0 and b.domain_histogram.sum() == 0


def test_huge_alpha_is_balanced():
    b = gen_slot_batch(0, 6000, 1e6, protos(), rng_stream(0, "w"))
    assert np.all(np.abs(b.domain_histogram - 1000) <= 50)


def test_small_alpha_is_skewed():
    hits = 0
    for seed in range(100):
        b = gen_slot_batch(0, 1000, 0.1, protos(), rng_stream(seed, "workload"))
        hits += b.domain_histogram.max() / 1000 > 0.4
    assert hits >= 50


@given(st.integers(0, 300), st.floats(0.05, 50), st.integers(0, 10_000))
def test_batch_invariants(b_t, alpha, seed):
    b = gen_slot_batch(7, b_t, alpha, protos(), rng_stream(seed, "w"), first_id=100)
    assert b.domain_histogram.sum() == b_t
    qs = b.queries
    assert all(q.arrival_slot == 7 for q in qs)
    assert len({q.id for q in qs}) == b_t
    assert np.all(np.isfinite(b.embeddings)) and b.embeddings.shape == (b_t, 32)


def test_batch_is_deterministic():
    p = protos()
    a = gen_slot_batch(0, 50, 1.0, p, rng_stream(5, "w"))
    b = gen_slot_batch(0, 50, 1.0, p, rng_stream(5, "w"))
    assert np.array_equal(a.embeddings, b.embeddings) and np.array_equal(a.domains, b.domains)


@pytest.mark.parametrize("layout", ["random", "paired"])
def test_embedding_separability(layout):
    p = protos(layout, sigma=0.3)
    b = gen_slot_batch(0, 12_000, 1e6, p, rng_stream(1, "w"))
    e = b.embeddings / np.linalg.norm(b.embeddings, axis=1, keepdims=True)
    sims = e @ p.vectors.T
    for d in range(6):
        rows = sims[b.domains == d]
        own = rows[:, d].mean()
        other = np.delete(rows, d, axis=1).mean(axis=0).max()
        assert own - other >= 0.2


def test_trace_parsing(tmp_path):
    f = tmp_path / "t.txt"
    f.write_text("3\n0\n7")
    assert load_trace(f) == [3, 0, 7]
    f.write_bytes(b"1\r\n2\r\n")
    assert load_trace(f) == [1, 2]
    f.write_text("")
    assert load_trace(f) == []
    f.write_text("-2\n")
    with pytest.raises(TraceError) as exc:
        load_trace(f)
    assert exc.value.lineno == 1
    f.write_text("4\nabc\n")
    with pytest.raises(TraceError, match="line 2"):
        load_trace(f)
