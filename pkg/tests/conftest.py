import os

import pytest
from hypothesis import HealthCheck, settings

from edgesched.core import GpuConfig, ModelVariant, NodeConfig, default_config
from edgesched.intranode import LatencyModel

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def planted():
    return default_config(0)


def make_node(n_gpus=1, pool=(0, 1), ts=0.5, node_id=0, domains=6):
    return NodeConfig(node_id, tuple(GpuConfig() for _ in range(n_gpus)), tuple(pool), ts,
                      tuple([1.0 / domains] * domains))


def latency_of(catalog):
    return {m.id: LatencyModel.quadratic(*m.latency_params, delta_t_s=m.delta_t_s, model_id=m.id) for m in catalog}


def two_model_catalog():
    """Small fast model and large slow one, single node."""
    small = ModelVariant(0, "small", 1.0, 0.15, (0.002, 0.5, 0.045, -0.9, 1.0), 0.05, (0.5,), "small")
    large = ModelVariant(1, "large", 3.5, 0.5, (0.004, 1.0, 0.065, -2.5, 8.6), 0.05, (0.8,), "large")
    return (small, large)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one pass/fail line per acceptance criterion, then assert it."""
    def check(n: int, ok: bool, detail: str):
        line = f"acceptance {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return check


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
