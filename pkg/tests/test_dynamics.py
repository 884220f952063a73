from __future__ import annotations

import math

import numpy as np
import pytest

from crnsim.config import ScenarioConfig
from crnsim.dynamics import TargetTruth, propagate_kinematics, simulate_truth, turn_step
from crnsim.geometry import Region
from crnsim.markov import CT, CV, transition_matrix

T0 = transition_matrix(0.8, 0.6)


def truth(state, v=(0.1, 0.0), w=0.0, pos=(5.0, 5.0)):
    return TargetTruth(0, np.array(pos), np.array(v), w, state, T0)


def test_cv_shift():
    out = propagate_kinematics(truth(CV), 1.0)
    np.testing.assert_allclose(out.position, [5.1, 5.0], atol=1e-15)
    np.testing.assert_allclose(out.velocity, [0.1, 0.0])


def test_ct_quarter_turn():
    out = propagate_kinematics(truth(CT, w=math.pi / 2), 1.0)
    np.testing.assert_allclose(out.velocity, [0.0, 0.1], atol=1e-15)
    # arc of radius v/w ends a quarter circle later
    r = 0.1 / (math.pi / 2)
    np.testing.assert_allclose(out.position, [5.0 + r, 5.0 + r], atol=1e-12)


def test_ct_preserves_speed_over_100_steps():
    tr = truth(CT, v=(0.02, 0.01), w=0.37)
    for _ in range(100):
        tr = propagate_kinematics(tr, 1.0)
    assert np.hypot(*tr.velocity) == pytest.approx(math.hypot(0.02, 0.01), abs=1e-9)


def test_cv_reversible():
    tr = truth(CV, v=(0.013, -0.021))
    fwd = propagate_kinematics(tr, 1.0)
    back = propagate_kinematics(fwd, -1.0)
    np.testing.assert_allclose(back.position, tr.position, atol=1e-12)


def test_turn_step_zero_rate_is_straight_line():
    p, v = turn_step(np.zeros(2), np.array([0.01, 0.02]), np.array(0.0), 2.0)
    np.testing.assert_allclose(p, [0.02, 0.04])


def test_leaving_bounded_region_kills_target():
    region = Region(10.0, 10.0)
    tr = truth(CV, v=(0.5, 0.0), pos=(9.8, 5.0))
    out = propagate_kinematics(tr, 1.0, region=region, wrap=False, t=7)
    assert not out.alive and out.death_time == 7
    assert propagate_kinematics(out, 1.0) is out


def test_process_noise_needs_rng():
    with pytest.raises(ValueError):
        propagate_kinematics(truth(CV), 1.0, accel_std=0.001)


@pytest.fixture(scope="module")
def history():
    cfg = ScenarioConfig(steps=400)
    region = Region(10.0, 10.0)
    return cfg, simulate_truth(cfg, region, np.random.default_rng(1), np.random.default_rng(2))


def test_history_shapes_and_speed_bounds(history):
    cfg, h = history
    assert h.position.shape == (401, h.n_targets, 2)
    speed0 = np.hypot(h.velocity[0, :, 0], h.velocity[0, :, 1]) * 1000
    assert np.all((speed0 >= cfg.speed_min_mps) & (speed0 <= cfg.speed_max_mps))
    for T in h.transition:
        assert np.all(np.abs(T.sum(axis=1) - 1) <= 1e-12)
        assert 0.7 <= T[0, 0] <= 0.9 and 0.5 <= T[1, 1] <= 0.7


def test_history_wraps_inside_region(history):
    _, h = history
    assert np.all((h.position >= 0) & (h.position <= 10.0))


def test_history_cv_steps_move_in_straight_lines_without_noise():
    cfg = ScenarioConfig(steps=50, process_noise_mps2=0.0, wrap=True)
    h = simulate_truth(cfg, Region(10, 10), np.random.default_rng(3), np.random.default_rng(4))
    cv = (h.gamma[1:] == CV)
    dv = np.abs(h.velocity[1:] - h.velocity[:-1]).max(axis=-1)
    assert np.all(dv[cv] < 1e-15)
    # CT steps preserve speed exactly
    sp = np.hypot(h.velocity[..., 0], h.velocity[..., 1])
    np.testing.assert_allclose(sp[1:], sp[:-1], atol=1e-12)


def test_history_state_frequencies_follow_chain():
    cfg = ScenarioConfig(steps=2000, target_density=0.5)
    h = simulate_truth(cfg, Region(10, 10), np.random.default_rng(5), np.random.default_rng(6))
    g = h.gamma
    stay_cv = ((g[:-1] == CV) & (g[1:] == CV)).sum(axis=0) / np.maximum((g[:-1] == CV).sum(axis=0), 1)
    np.testing.assert_allclose(stay_cv, h.transition[:, 0, 0], atol=0.05)


def test_births_and_deaths():
    cfg = ScenarioConfig(steps=200, birth_rate=0.01, mean_lifetime_s=50.0)
    h = simulate_truth(cfg, Region(10, 10), np.random.default_rng(7), np.random.default_rng(8))
    assert h.n_targets > int(h.alive[0].sum())
    for m in range(h.n_targets):
        a = h.alive[:, m]
        if a.any():
            first = np.argmax(a)
            last = len(a) - np.argmax(a[::-1])
            assert a[first:last].all()  # alive for one contiguous interval
            assert first >= h.birth[m]


def test_truth_is_deterministic():
    cfg = ScenarioConfig(steps=30)
    r = Region(10, 10)
    a = simulate_truth(cfg, r, np.random.default_rng(1), np.random.default_rng(2))
    b = simulate_truth(cfg, r, np.random.default_rng(1), np.random.default_rng(2))
    assert np.array_equal(a.position, b.position) and np.array_equal(a.gamma, b.gamma)
