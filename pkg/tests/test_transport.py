import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bada.exceptions import ConvergenceError
from bada.transport import (
    cost_matrix,
    dual_regularizer_estimate,
    w1_entropic,
    w1_exact,
    w1_value,
)

from conftest import brute_force_w1


def test_cost_matrix_small_cases():
    assert cost_matrix([[0.0]], [[1.0]]).tolist() == [[1.0]]
    assert cost_matrix([[0.0, 0.0]], [[3.0, 4.0]]).tolist() == [[5.0]]
    pts = np.random.default_rng(0).normal(size=(5, 3))
    assert np.all(np.diag(cost_matrix(pts, pts)) == 0)


def test_cost_matrix_dim_mismatch():
    with pytest.raises(ValueError):
        cost_matrix(np.zeros((2, 2)), np.zeros((2, 3)))


def test_w1_scalar_examples():
    assert w1_exact([0, 0], [1, 1]).distance == pytest.approx(1.0, abs=1e-12)
    assert w1_exact([0, 1, 2], [0, 1, 5]).distance == pytest.approx(1.0, abs=1e-12)
    pts = np.random.default_rng(1).normal(size=(7, 4))
    assert w1_exact(pts, pts).distance == 0.0


def test_w1_matches_enumeration(rng):
    for n in range(1, 6):
        a, b = rng.normal(size=(n, 2)), rng.normal(size=(n, 2))
        assert abs(w1_exact(a, b).distance - brute_force_w1(a, b)) <= 1e-9


def test_unequal_sizes_against_replication(rng):
    # W1 between uniform measures is unchanged when every point is duplicated k times
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(3, 3))
    lp = w1_exact(a, b).distance
    rep = w1_exact(np.repeat(a, 3, axis=0), np.repeat(b, 2, axis=0)).distance
    assert lp == pytest.approx(rep, abs=1e-9)


def test_exact_potentials_are_a_dual_certificate(rng):
    a, b = rng.normal(size=(6, 2)), rng.normal(size=(6, 2))
    res = w1_exact(a, b, potentials=True)
    C = cost_matrix(a, b)
    u, v = res.potentials_mu, -res.potentials_nu
    assert np.all(u[:, None] + v[None, :] <= C + 1e-9)
    assert res.dual_value == pytest.approx(res.distance, abs=1e-9)
    assert dual_regularizer_estimate(a, b, res) == pytest.approx(res.distance, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, (4, 2), elements=st.floats(-10, 10)),
    arrays(np.float64, (4, 2), elements=st.floats(-10, 10)),
    arrays(np.float64, (4, 2), elements=st.floats(-10, 10)),
)
def test_w1_metric_properties(a, b, c):
    ab = w1_exact(a, b).distance
    assert ab >= 0
    assert ab == pytest.approx(w1_exact(b, a).distance, abs=1e-9)
    assert ab <= w1_exact(a, c).distance + w1_exact(c, b).distance + 1e-9


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (5, 3), elements=st.floats(-5, 5)),
       arrays(np.float64, (3,), elements=st.floats(-5, 5)))
def test_translating_one_cloud_is_bounded_by_shift(a, shift):
    # moving every point by s costs exactly |s| under the identity plan
    assert w1_exact(a, a + shift).distance <= np.linalg.norm(shift) + 1e-9


def test_w1_value_fast_path(rng):
    a, b = rng.normal(size=(8, 2)), rng.normal(size=(5, 2))
    C = cost_matrix(a, b)
    assert w1_value(C) == pytest.approx(w1_exact(a, b).distance, abs=1e-12)
    C2 = cost_matrix(a, a[::-1])
    assert w1_value(C2) == pytest.approx(w1_exact(a, a[::-1]).distance, abs=1e-12)


def test_entropic_close_to_exact(rng):
    a, b = rng.normal(size=(32, 8)), rng.normal(0.5, 1, size=(32, 8))
    exact = w1_exact(a, b).distance
    res = w1_entropic(a, b, rel_epsilon=0.01)
    assert abs(res.distance - exact) / exact <= 0.02
    assert res.residual < 1e-6
    # plan marginals
    assert np.allclose(res.plan.sum(1), 1 / 32, atol=1e-6)
    assert np.allclose(res.plan.sum(0), 1 / 32, atol=1e-6)


def test_entropic_self_transport_is_small(rng):
    a = rng.normal(size=(10, 2))
    res = w1_entropic(a, a, epsilon=1e-3)
    assert res.distance < 0.05


def test_entropic_point_masses_converge_to_distance():
    a, b = np.zeros((3, 2)), np.tile([2.0, 0.0], (3, 1))
    for eps in (1.0, 0.1, 0.01):
        assert w1_entropic(a, b, epsilon=eps).distance == pytest.approx(2.0, abs=1e-9)


def test_entropic_dual_estimate_two_point_masses():
    a, b = np.zeros((4, 1)), np.full((4, 1), 5.0)
    res = w1_entropic(a, b)
    assert dual_regularizer_estimate(a, b, res) == pytest.approx(5.0, rel=1e-3)
    assert dual_regularizer_estimate(a, a, w1_entropic(a, a)) == pytest.approx(0.0, abs=1e-6)


def test_entropic_nonconvergence_reports_residual(rng):
    a, b = rng.normal(size=(20, 3)), rng.normal(size=(20, 3))
    with pytest.raises(ConvergenceError) as info:
        w1_entropic(a, b, rel_epsilon=0.001, max_iter=3, tol=1e-12)
    assert info.value.residual > 0


def test_dual_estimate_requires_potentials(rng):
    a, b = rng.normal(size=(3, 2)), rng.normal(size=(3, 2))
    with pytest.raises(ValueError):
        dual_regularizer_estimate(a, b, w1_exact(a, b))
    with pytest.raises(ValueError):
        dual_regularizer_estimate(a[:2], b, w1_entropic(a, b))


def test_result_serializes(rng):
    res = w1_entropic(rng.normal(size=(3, 2)), rng.normal(size=(4, 2)))
    doc = json.loads(res.to_json())
    assert doc["method"] == "entropic"
    assert len(doc["potentials_mu"]) == 3 and len(doc["potentials_nu"]) == 4
