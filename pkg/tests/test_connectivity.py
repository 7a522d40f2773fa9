import math

import numpy as np
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from platoon_edca.config import ScenarioConfig
from platoon_edca.connectivity import build_matrix, count_in_range, in_range_counts
from platoon_edca.kinematics import initial_state


def test_range_boundary_is_inclusive():
    h = build_matrix(np.array([0.0, 500.0, 1000.1]), np.zeros(3), 500.0)
    assert h[0, 1] == 1
    assert h[1, 2] == 0
    assert h[0, 2] == 0


def test_self_and_isolated():
    h = build_matrix(np.array([0.0, 2000.0]), np.zeros(2), 500.0)
    assert np.array_equal(np.diag(h), [1, 1])
    assert count_in_range(h, 0) == 1


def test_all_in_range():
    x = np.linspace(0, 400, 72)
    h = build_matrix(x, np.zeros(72), 500.0)
    assert count_in_range(h, 10) == 72


coords = arrays(np.float64, 12, elements=st.floats(-3000, 3000))


@given(coords, coords)
def test_symmetric_and_reflexive(x, y):
    h = build_matrix(x, y, 500.0)
    assert np.array_equal(h, h.T)
    assert np.all(np.diag(h) == 1)
    assert np.array_equal(in_range_counts(h), h.sum(axis=1))


def test_initial_count_matches_brute_force():
    cfg = ScenarioConfig()
    s = initial_state(cfg)
    tgt = cfg.target_index
    brute = sum(1 for k in range(cfg.n_vehicles)
                if math.dist((s.x[tgt], s.y[tgt]), (s.x[k], s.y[k])) <= cfg.transmission_range)
    h = build_matrix(s.x, s.y, cfg.transmission_range)
    assert count_in_range(h, tgt) == brute == 36
