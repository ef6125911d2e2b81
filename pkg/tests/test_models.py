import json

import numpy as np
import pytest
from scipy.linalg import solve_discrete_lyapunov

from rbpf.errors import ConfigError
from rbpf.kalman import GaussianBelief, RegimeParams, kalman_step
from rbpf.models import (
    GridWorldModel,
    JmlsModel,
    corridor_scenario,
    load_model,
    load_scenario,
    model_from_dict,
    model_to_dict,
    scenario_names,
    ten_by_ten_scenario,
)


def strip(n=5, **kw):
    return GridWorldModel(width=n, height=1, actions="E", **kw)


def test_root_transition_kernel():
    np.testing.assert_allclose(strip(p_slip=0.0).root_transition(1, 1), [0, 0, 1, 0, 0])
    np.testing.assert_allclose(strip(p_slip=0.2).root_transition(1, 1), [0, 0.2, 0.8, 0, 0])
    np.testing.assert_allclose(strip(p_slip=0.2).root_transition(4, 1), [0, 0, 0, 0, 1])


def test_transition_rows_stochastic():
    m, _ = ten_by_ten_scenario()
    for t in range(1, 30):
        np.testing.assert_allclose(m.transition_matrix(t).sum(axis=1), 1.0)


def test_corridor_scenario():
    m, actions = corridor_scenario()
    assert m.n_cells == 8 and m.n_colors == 2
    assert len(actions) == 16
    assert (m.sensor_flip, m.p_slip, m.p_change) == (0.1, 0.2, 0.0)
    # out to the far wall and back to the start when nothing slips
    path = m.intended_path(0)
    assert path.max() == 7 and path[-1] == 0


def test_ten_by_ten_scenario_covers_grid():
    m, actions = ten_by_ten_scenario()
    assert m.n_cells == 100 and m.neighborhood == "3x3"
    path = m.intended_path(int(np.argmax(m.init_location)))
    assert m.visited_or_observed(path[1:]).all()
    assert m.coverage_step(path) is not None


def test_neighbourhood_clipping():
    m = GridWorldModel(3, 3, "E", neighborhood="3x3")
    nbr = m.neighbors(0)
    assert nbr.tolist() == [-1, -1, -1, -1, 0, 1, -1, 3, 4]
    assert (m.neighbors(4) >= 0).all()


def test_noiseless_simulation_reads_true_map():
    m = GridWorldModel(4, 1, "EEEW", sensor_flip=0.0, p_slip=0.0, true_map="0110")
    run = m.simulate(4, np.random.default_rng(0))
    assert run.roots.tolist() == [0, 1, 2, 3, 2]
    assert [int(y[0]) for y in run.observations] == [1, 1, 0, 1]


def test_simulation_deterministic_given_seed():
    m, _ = corridor_scenario()
    a = m.simulate(16, np.random.default_rng(5))
    b = m.simulate(16, np.random.default_rng(5))
    np.testing.assert_array_equal(a.roots, b.roots)
    assert all(np.array_equal(x, y) for x, y in zip(a.observations, b.observations))


def test_changing_map_simulation_flips():
    m = GridWorldModel(4, 1, "X", p_change=1.0, true_map="0000")
    run = m.simulate(3, np.random.default_rng(0))
    assert run.hidden[1].tolist() == [1, 1, 1, 1]
    assert run.hidden[2].tolist() == [0, 0, 0, 0]


@pytest.mark.parametrize("name", scenario_names())
def test_contract(name):
    load_scenario(name).check_contract(n=32, t=2)


def test_wall_pattern_mismatch_is_impossible():
    m = GridWorldModel(3, 3, "X", neighborhood="3x3", sensor_flip=0.1)
    y = np.array([-1, -1, -1, -1, 0, 0, -1, 0, 0])  # seen from the corner
    stats = m.initial_stats(2)
    _, ll = m.cond_step(stats, np.array([0, 4]), np.array([0, 4]), y, 1)
    assert np.isfinite(ll[0]) and ll[1] == -np.inf


def test_collapse_to_truth_without_noise():
    m = GridWorldModel(5, 5, "EEEESSWWWWSSEEEE", neighborhood="3x3", sensor_flip=0.0, p_slip=0.0,
                       init_location=0)
    run = m.simulate(None, np.random.default_rng(3))
    stats = m.initial_stats(1)
    for t in range(1, run.horizon + 1):
        stats, ll = m.cond_step(stats, run.roots[t - 1:t], run.roots[t:t + 1], run.observations[t - 1], t)
        assert np.isfinite(ll).all()
    seen = m.visited_or_observed(run.roots[1:])
    assert seen.all()
    np.testing.assert_array_equal(stats[0].argmax(axis=1), run.hidden[-1])
    assert stats[0].max(axis=1).min() == 1.0


def test_jmls_cond_step_is_kalman_step():
    m = load_scenario("jmls_switching")
    stats = m.initial_stats(2)
    roots = np.array([0, 1])
    (mean, cov), ll = m.cond_step(stats, roots, roots, np.array([0.7]), 1)
    for i, r in enumerate(roots):
        b, l = kalman_step(m.init_belief, m.regimes[r], 0.7)
        np.testing.assert_allclose(mean[i], b.mean, rtol=1e-13)
        np.testing.assert_allclose(cov[i], b.cov, rtol=1e-13)
        assert ll[i] == pytest.approx(l, rel=1e-13)


def test_single_regime_stationary_variance():
    A, C, Q, R = 0.9, 1.0, 0.05, 0.5
    m = JmlsModel((RegimeParams(A, C, Q, R),), [[1.0]], [1.0], GaussianBelief([0.0], [[1.0]]))
    n = 100_000
    run = m.simulate(n, np.random.default_rng(11))
    y = np.array(run.observations)[1000:, 0]
    P = solve_discrete_lyapunov(np.array([[A]]), np.array([[Q]]))[0, 0]
    target = C * P * C + R
    # autocovariance of y for the standard error of the sample variance
    lags = np.arange(1, 200)
    gamma = np.concatenate([[target], C * A**lags * P * C])
    se = np.sqrt(2.0 / y.size * (gamma[0] ** 2 + 2 * np.sum(gamma[1:] ** 2)))
    assert abs(y.var() - target) < 3 * se


def test_config_round_trip(tmp_path):
    for name in scenario_names():
        m = load_scenario(name)
        doc = model_to_dict(m)
        m2 = model_from_dict(json.loads(json.dumps(doc)))
        assert model_to_dict(m2) == doc
        p = tmp_path / f"{name}.json"
        p.write_text(json.dumps(doc))
        assert model_to_dict(load_model(p)) == doc


@pytest.mark.parametrize("bad", [
    {"kind": "grid", "width": 0, "height": 1, "actions": "E"},
    {"kind": "grid", "width": 2, "height": 1, "actions": "Q"},
    {"kind": "grid", "width": 2, "height": 1, "actions": "E", "sensor_flip": 1.5},
    {"kind": "grid", "width": 2, "height": 1, "actions": "E", "true_map": "012"},
    {"kind": "teleporter"},
])
def test_config_errors(bad):
    with pytest.raises(ConfigError):
        model_from_dict({"schema": "rbpf.model/1", **bad})


def test_unknown_scenario():
    with pytest.raises(ConfigError):
        load_scenario("atlantis")


def test_jmls_validation():
    p = RegimeParams(1.0, 1.0, 1.0, 1.0)
    with pytest.raises(ConfigError):
        JmlsModel((p, p), [[0.5, 0.6], [0.5, 0.5]], [0.5, 0.5], GaussianBelief([0.0], [[1.0]]))
