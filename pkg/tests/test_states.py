import itertools

import numpy as np
import pytest

from edgesched.core import rng_stream
from edgesched.intranode import (
    bigm_rc_feasible,
    load_state,
    loading_time,
    loading_time_indicator,
    reload_state,
    resource_change,
    transition_flags,
    unload_state,
)


def test_unload_load_examples():
    assert (unload_state(1, 0), load_state(1, 0)) == (1, 0)
    assert (unload_state(0, 1), load_state(0, 1)) == (0, 1)
    for d in (0, 1):
        assert (unload_state(d, d), load_state(d, d)) == (0, 0)


def test_resource_change_examples():
    assert resource_change(0.5, 0.5, 0.01) == 0
    assert resource_change(0.5, 0.52, 0.01) == 1
    assert resource_change(0.5, 0.505, 0.01) == 0


def test_reload_examples():
    assert reload_state(1, 0, 0) == 1
    assert reload_state(1, 1, 0) == 0
    assert reload_state(1, 0, 1) == 0
    assert reload_state(0, 0, 0) == 0


def test_truth_table():
    for dp, dc, rc in itertools.product((0, 1), (0, 1), (0, 1)):
        rp = 0.4 if dp else 0.0
        rcur = (0.6 if rc else rp) if dc else 0.0
        if dc and not dp:
            rcur = 0.4
        f = transition_flags(dp, dc, rp, rcur, 0.01)
        assert f["uld"] == (1 - dc) * dp and f["ld"] == dc * (1 - dp)
        assert f["rld"] == int(dp == 1 and dc == 1 and abs(rcur - rp) > 0.01)


def test_loading_time_example():
    prev = {0: (0, 0.0), 1: (1, 0.3), 2: (1, 0.4)}
    cur = {0: (1, 0.2), 1: (1, 0.5), 2: (0, 0.0)}
    assert loading_time(prev, cur, {0: 5.0, 1: 8.0, 2: 3.0}, 0.01) == 13.0
    assert loading_time(prev, prev, {0: 5.0, 1: 8.0, 2: 3.0}, 0.01) == 0.0


def _random_state(rng, n, grid):
    d = rng.integers(0, 2, n)
    return {m: (int(d[m]), float(rng.choice(grid)) if d[m] else 0.0) for m in range(n)}


def test_indicator_form_agrees():
    rng = rng_stream(0, "eq")
    grid = np.round(np.arange(0.1, 1.0001, 0.05), 10)
    lt = rng.uniform(0.5, 10, 4)
    for _ in range(10_000):
        prev, cur = _random_state(rng, 4, grid), _random_state(rng, 4, grid)
        assert loading_time(prev, cur, lt, 0.01) == loading_time_indicator(prev, cur, lt, 0.01)


def test_printed_bigm_pair_rejects_every_change():
    rng = rng_stream(0, "bigm")
    for rp, rc_ in rng.uniform(0, 1, (500, 2)):
        assert not bigm_rc_feasible(rp, rc_, 1, 0.01, 10.0)
    assert bigm_rc_feasible(0.5, 0.5, 0, 0.01, 10.0)
