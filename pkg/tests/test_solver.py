import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import latency_of, make_node, two_model_catalog
from edgesched.core import ModelVariant, SolverConfig, planted_catalog, rng_stream
from edgesched.intranode import (
    InstanceTooLarge,
    brute_force_oracle,
    build_plan,
    check_plan_feasibility,
    solve_intranode,
)
from edgesched.intranode.bench import bench_optimizer, random_instance, relative_gap

CFG = SolverConfig()


def _share(plan, model):
    return sum(g.models[model].queries for g in plan.gpus if model in g.models) / plan.q_assigned


def test_single_option_instance():
    cat = two_model_catalog()[:1]
    node = make_node(1, (0,))
    plan = solve_intranode(node, 50, 20.0, None, CFG, cat, latency_of(cat))
    a = plan.get(0, 0)
    assert (a.d, a.R, a.queries, plan.dropped) == (1, 1.0, 50, 0)
    assert plan.objective == pytest.approx(0.5)
    oracle = brute_force_oracle(node, 50, 20.0, None, cat, latency_of(cat))
    assert oracle.objective == pytest.approx(plan.objective)


def test_unreachable_budget_drops_everything():
    cat = two_model_catalog()
    node = make_node(1, (0, 1))
    plan = solve_intranode(node, 40, 1.2, None, CFG, cat, latency_of(cat))
    assert plan.served == 0 and plan.dropped == 40 and plan.objective == 0
    oracle = brute_force_oracle(node, 40, 1.2, None, cat, latency_of(cat))
    assert oracle.served == 0 and oracle.dropped == 40


def test_empty_pool_rejected():
    with pytest.raises(ValueError):
        solve_intranode(make_node(1, ()), 10, 10.0, None, CFG, (), {})


def test_two_models_needed_close_to_oracle():
    cat = two_model_catalog()
    lat = latency_of(cat)
    node = make_node(1, (0, 1))
    plan = solve_intranode(node, 180, 15.0, None, CFG, cat, lat)
    oracle = brute_force_oracle(node, 180, 15.0, None, cat, lat)
    assert plan.get(0, 0).queries > 0 and plan.get(0, 1).queries > 0
    assert relative_gap(plan.objective, oracle.objective) <= 0.02
    assert not check_plan_feasibility(plan, node, 15.0, cat, lat)


def test_oracle_refuses_large_instances():
    cat = planted_catalog(1)
    with pytest.raises(InstanceTooLarge):
        brute_force_oracle(make_node(3, (0, 1, 2)), 10, 10.0, None, cat, latency_of(cat))
    big = cat + (ModelVariant(3, "x", 1.0, 0.1, (0.002, 0.5, 0.045, -0.9, 1.0), 0.05, (0.5,), "small"),)
    with pytest.raises(InstanceTooLarge):
        brute_force_oracle(make_node(1, (0, 1, 2, 3)), 10, 10.0, None, big, latency_of(big))


@settings(max_examples=40)
@given(st.integers(0, 10_000))
def test_solver_plans_are_feasible(seed):
    inst = random_instance(rng_stream(seed, "fuzz"), CFG)
    plan = solve_intranode(inst.node, inst.q_n, inst.slo, inst.prev, CFG, inst.catalog, inst.latency)
    assert check_plan_feasibility(plan, inst.node, inst.slo, inst.catalog, inst.latency) == []
    assert plan.served + plan.dropped == inst.q_n


def test_feasibility_audit_examples():
    cat = two_model_catalog()
    lat = latency_of(cat)
    node = make_node(1, (0, 1))
    over = build_plan(node, 0, 20.0, None, [{0: (0.6, 0), 1: (0.5, 0)}], cat, lat, 0.01)
    assert any(v.startswith("memory_capacity") for v in check_plan_feasibility(over, node, 20.0, cat, lat))
    plan = build_plan(node, 0, 20.0, None, [{0: (0.5, 0)}], cat, lat, 0.01)
    plan.gpus[0].models[1].R = 0.1
    assert any(v.startswith("undeployed_memory") for v in check_plan_feasibility(plan, node, 20.0, cat, lat))
    plan = build_plan(node, 500, 5.0, None, [{0: (1.0, 500)}], cat, lat, 0.01)
    assert any(v.startswith("latency") for v in check_plan_feasibility(plan, node, 5.0, cat, lat))


def test_relaxing_slo_never_hurts():
    cat = planted_catalog(1)
    lat = latency_of(cat)
    for g in (1, 2):
        node = make_node(g, (0, 1, 2))
        for q in (40, 150, 400):
            objs = [solve_intranode(node, q, L, None, CFG, cat, lat).objective for L in (3, 5, 8, 12, 20, 40)]
            assert all(b >= a - 1e-12 for a, b in zip(objs, objs[1:]))


def test_runtime_budget():
    rng = rng_stream(0, "timing")
    cat = planted_catalog(1)
    lat = latency_of(cat)
    node = make_node(2, (0, 1, 2))
    times = []
    for _ in range(20):
        t0 = time.perf_counter()
        solve_intranode(node, int(rng.integers(20, 600)), float(rng.uniform(3, 25)), None, CFG, cat, lat)
        times.append(time.perf_counter() - t0)
    assert np.mean(times) < 0.1


def test_bench_optimizer_small_run():
    rep = bench_optimizer(15, seed=3)
    assert rep.instances == 15 and len(rep.gaps) == 15
    assert rep.max_gap <= 0.02 and rep.infeasible_solver == 0 and rep.infeasible_oracle == 0
    again = bench_optimizer(15, seed=3)
    assert again.gaps == rep.gaps
    assert bench_optimizer(0, seed=1).instances == 0


def test_relative_gap_edges():
    assert relative_gap(1.0, 1.0) == 0
    assert relative_gap(0.0, 0.0) == 0
    assert relative_gap(0.9, 1.0) == pytest.approx(0.1)
    assert relative_gap(1.1, 1.0) < 0


@pytest.mark.parametrize("n_gpus", [1, 2])
def test_regime_shift(n_gpus):
    cat = planted_catalog(1)
    lat = latency_of(cat)
    node = make_node(n_gpus, (0, 1, 2))
    tight = solve_intranode(node, 100, 5.0, None, CFG, cat, lat)
    assert _share(tight, 1) == 0 and _share(tight, 2) == 0
    loose = solve_intranode(node, 100, 15.0, None, CFG, cat, lat)
    assert _share(loose, 0) == 0 and loose.dropped == 0
    if n_gpus == 2:
        assert _share(tight, 0) >= 0.95 and tight.dropped / 100 < 0.03
        assert _share(loose, 2) >= 0.6
