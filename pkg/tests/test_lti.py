import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seplearn.errors import DimensionMismatch, HorizonMismatch, IndexOutOfHorizon
from seplearn.lti import (Dims, EpisodeRecord, NoiseSpec, QuadraticCostSpec, TimeVaryingLinearSystem,
                          discrepancy_penalty, observe, problem1_cost, problem2_cost, step_model,
                          step_plant, validate_system)
from seplearn.sim import draw_primitives


def scalar_model():
    return TimeVaryingLinearSystem.constant(3, 2, 2, 1, 0, T=2)


def test_example_model_is_valid():
    validate_system(scalar_model(), Dims(1, 1, 1, 1, 1, 2))


def test_short_sequence_is_a_horizon_mismatch():
    sys = TimeVaryingLinearSystem(A=[[[3.0]]], B=[[[2.0]], [[2.0]]], D=[[[2.0]], [[2.0]]],
                                  C=[[[1.0]]] * 3, E=[[[0.0]]] * 3)
    with pytest.raises(HorizonMismatch):
        validate_system(sys, Dims(1, 1, 1, 1, 1, 2))


def test_validate_ignores_cost_shapes():
    sys = TimeVaryingLinearSystem.constant([[1.0]], [[1.0, 2.0]], [[1.0]], [[1.0]], [[0.0]], T=2)
    validate_system(sys, Dims(1, 2, 1, 1, 1, 2))


def test_wrong_block_shape():
    with pytest.raises(DimensionMismatch):
        validate_system(scalar_model(), Dims(2, 1, 1, 1, 1, 2))


@pytest.mark.parametrize("x,u,w,expected", [(1, 0, 0, 3.0), (0, 0, 0, 0.0), (1, -0.5, 0.25, 2.5)])
def test_step_model(x, u, w, expected):
    assert step_model(scalar_model(), 0, [x], [u], [w])[0] == pytest.approx(expected, abs=1e-15)


def test_step_plant():
    plant = TimeVaryingLinearSystem(A=[[[1.0]], [[1.0]]], B=[[[1.0]], [[1.0]]], D=[[[1.0]], [[0.0]]],
                                    C=[[[1.0]]] * 3, E=[[[0.0]]] * 3)
    assert step_plant(plant, 0, [1.0], [-0.5], [0.25])[0] == pytest.approx(0.75)
    assert step_plant(plant, 0, [0.0], [0.0], [0.0])[0] == 0.0
    # last transition, into the terminal state
    assert step_plant(plant, 1, [0.75], [-0.375], [123.0])[0] == pytest.approx(0.375)


def test_step_outside_horizon():
    with pytest.raises(IndexOutOfHorizon):
        step_model(scalar_model(), 2, [0.0], [0.0], [0.0])


def test_observe():
    assert observe(scalar_model(), 0, [2.5], [0.1])[0] == 2.5
    sys = TimeVaryingLinearSystem.constant(np.eye(2), np.eye(2), np.eye(2), np.eye(2), np.eye(2), T=1)
    assert np.all(observe(sys, 1, [0, 0], [0, 0]) == 0)
    sys = TimeVaryingLinearSystem.constant(np.eye(2), np.ones((2, 1)), np.ones((2, 1)), [[1.0, 0.0]], [[0.5]], T=1)
    assert observe(sys, 0, [2.0, 7.0], [2.0])[0] == pytest.approx(3.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-3, 3))
def test_step_is_linear(seed, alpha):
    rng = np.random.default_rng(seed)
    n, m, r, T = 3, 2, 2, 2
    sys = TimeVaryingLinearSystem(rng.normal(size=(T, n, n)), rng.normal(size=(T, n, m)), rng.normal(size=(T, n, r)),
                                  rng.normal(size=(T + 1, 1, n)), rng.normal(size=(T + 1, 1, 1)))
    x1, x2, u1, u2, w1, w2 = (rng.normal(size=k) for k in (n, n, m, m, r, r))
    lhs = step_model(sys, 1, alpha * x1 + x2, alpha * u1 + u2, alpha * w1 + w2)
    rhs = alpha * step_model(sys, 1, x1, u1, w1) + step_model(sys, 1, x2, u2, w2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def _episode(xhat, u, x=None):
    xhat = np.asarray(xhat, float).reshape(-1, 1)
    x = xhat if x is None else np.asarray(x, float).reshape(-1, 1)
    u = np.asarray(u, float).reshape(-1, 1)
    T = u.shape[0]
    return EpisodeRecord(x=x, xhat=xhat, y=x, yhat=xhat, u=u, w=np.zeros((T, 1)), z=np.zeros((T + 1, 1)))


EX_COST = QuadraticCostSpec(Qx=np.zeros((2, 1, 1)), Ru=[[[0.0]], [[0.5]]], QT=[[0.5]])


@pytest.mark.parametrize("xh2,u1,expected", [(0.0, 0.0, 0.0), (1.0, 1.0, 1.0), (0.5, -0.5, 0.25)])
def test_problem1_cost(xh2, u1, expected):
    assert problem1_cost(_episode([0.3, 0.2, xh2], [0.7, u1]), EX_COST) == pytest.approx(expected)


def test_problem2_cost_identical_trajectories_is_model_cost():
    ep = _episode([1.0, 2.0, 0.5], [0.1, -0.5])
    assert problem2_cost(ep, EX_COST) == problem1_cost(ep, EX_COST)


def test_problem2_penalty_only():
    zero = QuadraticCostSpec(Qx=np.zeros((2, 1, 1)), Ru=np.zeros((2, 1, 1)), QT=[[0.0]], beta=1.0)
    ep = _episode([0.0, 0.0, 1.0], [0.0, 0.0], x=[0.0, 2.0, 1.0])
    assert problem2_cost(ep, zero) == pytest.approx(4.0)
    assert discrepancy_penalty(ep, 1.0) == pytest.approx(4.0)


def test_problem2_with_zero_beta_is_model_only_cost():
    rng = np.random.default_rng(0)
    cost = QuadraticCostSpec(Qx=np.ones((2, 1, 1)), Ru=np.ones((2, 1, 1)), QT=[[2.0]], beta=0.0)
    for _ in range(10):
        x, xh, u = rng.normal(size=3), rng.normal(size=3), rng.normal(size=2)
        xh[0] = x[0]
        ep = _episode(xh, u, x=x)
        assert problem2_cost(ep, cost) == pytest.approx(problem1_cost(_episode(x, u), cost), abs=1e-12)


def test_costs_do_not_depend_on_episode_labels():
    ep = _episode([1.0, 2.0, 0.5], [0.1, -0.5])
    from dataclasses import replace
    relabeled = replace(ep, seed=99, stream=1234)
    assert problem1_cost(ep, EX_COST) == problem1_cost(relabeled, EX_COST)
    assert problem2_cost(ep, EX_COST) == problem2_cost(relabeled, EX_COST)


def test_episode_requires_shared_initial_state():
    with pytest.raises(ValueError):
        _episode([1.0, 0.0, 0.0], [0.0, 0.0], x=[2.0, 0.0, 0.0])


def test_control_weight_may_be_singular_but_not_indefinite():
    QuadraticCostSpec(Qx=np.zeros((1, 1, 1)), Ru=np.zeros((1, 1, 1)), QT=[[1.0]])
    with pytest.raises(ValueError):
        QuadraticCostSpec(Qx=np.zeros((1, 1, 1)), Ru=-np.ones((1, 1, 1)), QT=[[1.0]])


def test_noise_rejects_indefinite_covariance():
    d = Dims(1, 1, 1, 1, 1, 1)
    cov = np.eye(4)
    cov[0, 1] = cov[1, 0] = 2.0
    with pytest.raises(ValueError):
        NoiseSpec(np.zeros(4), cov, d)


def test_noise_sampling_moments():
    d = Dims(2, 1, 1, 1, 1, 1)
    rng = np.random.default_rng(1)
    G = rng.normal(size=(5, 5))
    cov = G @ G.T
    mean = rng.normal(size=5)
    noise = NoiseSpec(mean, cov, d)
    N = 1_000_000
    prims, _ = draw_primitives(noise, seed=5, stream0=0, count=N)
    sd = np.sqrt(np.diag(cov))
    assert np.all(np.abs(prims.mean(axis=0) - mean) <= 4 * sd / np.sqrt(N))
    emp = np.cov(prims, rowvar=False)
    # stderr of a Gaussian sample covariance entry: sqrt((s_ij^2 + s_ii s_jj) / N)
    se = np.sqrt((cov ** 2 + np.outer(np.diag(cov), np.diag(cov))) / N)
    assert np.all(np.abs(emp - cov) <= 4 * se)


def test_split_layout():
    d = Dims(1, 1, 1, 1, 1, 2)
    noise = NoiseSpec(np.zeros(6), np.eye(6), d)
    x0, w, z = noise.split(np.arange(6.0))
    assert x0.tolist() == [0.0]
    assert w.ravel().tolist() == [1.0, 2.0]
    assert z.ravel().tolist() == [3.0, 4.0, 5.0]
