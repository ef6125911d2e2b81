import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as hst

from rbpf.mapbelief import (
    FactoredMapBelief,
    change_kernel,
    map_predict,
    map_update,
    predict_marginals,
    sensor_matrix,
)


def test_uniform_black_observation():
    post, lp = map_update(FactoredMapBelief.uniform(1, 2), [0], [0], 0.1)
    np.testing.assert_allclose(post.cell_marginals, [[0.9, 0.1]], atol=1e-15)
    assert lp == pytest.approx(np.log(0.5), abs=1e-15)


def test_uninformative_sensor():
    theta = np.array([[0.7, 0.3], [0.2, 0.8]])
    post, lp = map_update(FactoredMapBelief(theta), [1], [1], 0.5)
    np.testing.assert_allclose(post.cell_marginals, theta, atol=1e-15)
    assert lp == pytest.approx(np.log(0.5))


def test_contradiction_is_minus_inf():
    _, lp = map_update(FactoredMapBelief(np.array([[1.0, 0.0]])), [0], [1], 0.0)
    assert lp == -np.inf


def test_predict_examples():
    theta = np.array([[0.9, 0.1]])
    assert predict_marginals(theta, 0.0) is theta
    np.testing.assert_allclose(predict_marginals(theta, 1.0), [[0.1, 0.9]])
    np.testing.assert_allclose(map_predict(FactoredMapBelief(theta), 0.1).cell_marginals, [[0.82, 0.18]])


def test_predict_equals_kernel_product(rng):
    theta = rng.dirichlet(np.ones(3), size=5)
    np.testing.assert_allclose(predict_marginals(theta, 0.3), theta @ change_kernel(3, 0.3), atol=1e-15)


def test_belief_validation():
    with pytest.raises(ValueError):
        FactoredMapBelief(np.array([[0.6, 0.6]]))
    with pytest.raises(ValueError):
        map_update(FactoredMapBelief.uniform(2, 2), [2], [0], 0.1)


def test_sensor_matrix_rows():
    S = sensor_matrix(3, 0.3)
    np.testing.assert_allclose(S.sum(axis=1), 1.0)
    assert S[0, 0] == pytest.approx(0.7) and S[0, 1] == pytest.approx(0.15)


@given(hst.integers(2, 4), hst.floats(0.0, 0.49), hst.integers(0, 2**32 - 1))
def test_order_invariance(n_colors, eps, seed):
    rng = np.random.default_rng(seed)
    theta = rng.dirichlet(np.ones(n_colors), size=4)
    cells = np.array([0, 2, 3])
    obs = rng.integers(0, n_colors, size=3)
    a, la = map_update(FactoredMapBelief(theta), cells, obs, eps)
    perm = rng.permutation(3)
    b, lb = map_update(FactoredMapBelief(theta), cells[perm], obs[perm], eps)
    np.testing.assert_allclose(a.cell_marginals, b.cell_marginals, atol=1e-14)
    assert la == pytest.approx(lb, abs=1e-12)


@given(hst.floats(0.0, 0.5), hst.floats(0.0, 1.0), hst.integers(0, 2**32 - 1))
def test_rows_stay_normalised(eps, p_change, seed):
    rng = np.random.default_rng(seed)
    b = FactoredMapBelief(rng.dirichlet(np.ones(2), size=3))
    for _ in range(20):
        b = map_predict(b, p_change)
        b, _ = map_update(b, [int(rng.integers(3))], [int(rng.integers(2))], eps)
        if not np.isfinite(_):
            break
        assert np.allclose(b.cell_marginals.sum(axis=1), 1.0, atol=1e-9)


def test_matches_joint_enumeration():
    # two independent cells observed once each; brute force over the 4 maps
    theta = np.array([[0.7, 0.3], [0.4, 0.6]])
    eps = 0.2
    S = sensor_matrix(2, eps)
    joint = {}
    for m in itertools.product(range(2), repeat=2):
        joint[m] = theta[0, m[0]] * theta[1, m[1]] * S[m[0], 1] * S[m[1], 0]
    z = sum(joint.values())
    post, lp = map_update(FactoredMapBelief(theta), [0, 1], [1, 0], eps)
    assert lp == pytest.approx(np.log(z), abs=1e-14)
    m0 = sum(v for k, v in joint.items() if k[0] == 0) / z
    assert post.cell_marginals[0, 0] == pytest.approx(m0, abs=1e-14)
