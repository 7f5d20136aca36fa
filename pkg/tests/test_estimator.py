import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_instance
from seplearn.errors import EmptyDensity, IndexOutOfHorizon
from seplearn.estimator import (BeliefMixture, GaussianBelief, OutputDensityEstimate, ResponseRegressor,
                                factorize, filter_gains, info_state_update, initial_information_state,
                                kalman_init, kalman_step, learn_output_density)
from seplearn.lti import Dims, NoiseSpec, TimeVaryingLinearSystem
from seplearn.oracle.conditioning import batch_state_belief, state_maps


def scalar_chain(T=1):
    sys = TimeVaryingLinearSystem.constant(1, 1, 1, 1, 0, T=T)
    noise = NoiseSpec.independent(Dims(1, 1, 1, 1, 1, T), [0.0], [[1.0]], [[1.0]], [[0.0]])
    return sys, noise


def test_perfect_measurement_returns_the_output():
    sys, noise = scalar_chain()
    b = kalman_step(sys, noise, kalman_init(sys, noise, [0.0]), 0, [0.0], [0.7])
    assert b.mean[0] == pytest.approx(0.7)
    assert b.cov[0, 0] == pytest.approx(0.0, abs=1e-12)


def test_perfect_measurement_with_invertible_C():
    rng = np.random.default_rng(3)
    sys, noise = random_instance(rng, n=3, p=3, s=3, T=3)
    sys = TimeVaryingLinearSystem(sys.A, sys.B, sys.D, sys.C, np.zeros_like(sys.E))
    b = kalman_init(sys, noise, rng.normal(size=3))
    for t in range(3):
        b = kalman_step(sys, noise, b, t, rng.normal(size=sys.B.shape[2]), rng.normal(size=3))
        assert np.max(np.abs(b.cov)) <= 1e-12


def test_two_step_chain_matches_batch_conditioning():
    sys, noise = scalar_chain(T=2)
    noise = NoiseSpec.independent(noise.dims, [0.2], [[1.0]], [[1.0]], [[0.3]])
    sys = TimeVaryingLinearSystem.constant(1, 1, 1, 1, 1, T=2)
    u, y = np.array([[0.5], [-0.2]]), np.array([[0.1], [0.9], [-0.4]])
    b = kalman_init(sys, noise, y[0])
    for t in range(2):
        b = kalman_step(sys, noise, b, t, u[t], y[t + 1])
        ref = batch_state_belief(sys, noise, u, y, t + 1)
        np.testing.assert_allclose(b.mean, ref.mean, atol=1e-8)
        np.testing.assert_allclose(b.cov, ref.cov, atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_filter_matches_batch_conditioning(seed):
    rng = np.random.default_rng(seed)
    sys, noise = random_instance(rng)
    d = noise.dims
    u = rng.normal(size=(d.T, d.m))
    Phi, c, Psi, dd = state_maps(sys, noise, u)
    xi = noise.transform(rng.normal(size=d.n_primitives))
    y = np.einsum("tpk,k->tp", Psi, xi) + dd
    b = kalman_init(sys, noise, y[0])
    for t in range(d.T + 1):
        if t:
            b = kalman_step(sys, noise, b, t - 1, u[t - 1], y[t])
        ref = batch_state_belief(sys, noise, u, y, t)
        assert np.max(np.abs(b.mean - ref.mean)) <= 1e-8
        assert np.max(np.abs(b.cov - ref.cov)) <= 1e-8


def test_filter_gains_reproduce_the_filter_means():
    rng = np.random.default_rng(11)
    sys, noise = random_instance(rng, T=4)
    d = noise.dims
    g = filter_gains(sys, noise)
    u = rng.normal(size=(d.T, d.m))
    y = rng.normal(size=(d.T + 1, d.p))
    b = kalman_init(sys, noise, y[0])
    m = g.x0_mean + g.G[0] @ (y[0] - sys.C[0] @ g.x0_mean - sys.E[0] @ g.z_mean[0])
    np.testing.assert_allclose(m, b.mean, atol=1e-10)
    for t in range(d.T):
        b = kalman_step(sys, noise, b, t, u[t], y[t + 1])
        pred = sys.A[t] @ m + sys.B[t] @ u[t] + sys.D[t] @ g.w_mean[t]
        m = pred + g.G[t + 1] @ (y[t + 1] - sys.C[t + 1] @ pred - sys.E[t + 1] @ g.z_mean[t + 1])
        np.testing.assert_allclose(m, b.mean, atol=1e-10)
        np.testing.assert_allclose(g.cov[t + 1], b.cov, atol=1e-10)


def test_info_state_model_belief_on_example(example):
    model, plant, noise, _ = example
    pi = initial_information_state(model, noise, [1.0], [1.0])
    pi = info_state_update(pi, step_out(model, 1.0, -0.5, 0.0), [0.5], [-0.5], model)
    assert pi.model_belief.mean[0] == pytest.approx(2.0)
    assert pi.t == 1


def step_out(model, x, u, w):
    return [model.A[0, 0, 0] * x + model.B[0, 0, 0] * u + model.D[0, 0, 0] * w]


def test_info_state_update_past_horizon(example):
    model, _, noise, _ = example
    pi = initial_information_state(model, noise, [1.0], [1.0])
    for _ in range(2):
        pi = info_state_update(pi, [0.0], [0.0], [0.0], model)
    with pytest.raises(IndexOutOfHorizon):
        info_state_update(pi, [0.0], [0.0], [0.0], model)


def test_info_state_update_is_deterministic():
    rng = np.random.default_rng(5)
    sys, noise = random_instance(rng, T=4)
    d = noise.dims
    ys, yhs, us = rng.normal(size=(d.T + 1, d.p)), rng.normal(size=(d.T + 1, d.p)), rng.normal(size=(d.T, d.m))
    runs = []
    for _ in range(2):
        pi = initial_information_state(sys, noise, ys[0], yhs[0])
        seq = [pi]
        for t in range(d.T):
            pi = info_state_update(pi, ys[t + 1], yhs[t + 1], us[t], sys)
            seq.append(pi)
        runs.append(seq)
    for a, b in zip(*runs):
        assert a.model_belief.mean.tobytes() == b.model_belief.mean.tobytes()
        assert a.plant_belief.cov.tobytes() == b.plant_belief.cov.tobytes()


def test_density_first_sample_and_pair():
    est = learn_output_density(OutputDensityEstimate(p=1, step=0), [3.0])
    assert est.count == 1 and est.mean[0] == 3.0 and est.cov[0, 0] == 0.0
    est = learn_output_density(learn_output_density(OutputDensityEstimate(p=1, step=0), [0.0]), [2.0])
    assert est.mean[0] == pytest.approx(1.0)
    assert est.cov[0, 0] == pytest.approx(2.0)


def test_density_recovers_a_known_gaussian():
    rng = np.random.default_rng(2)
    N = 100_000
    mean, cov = np.array([1.0, -2.0]), np.array([[2.0, 0.6], [0.6, 1.0]])
    samples = rng.multivariate_normal(mean, cov, size=N)
    est = OutputDensityEstimate.from_samples(samples, p=1)
    assert np.all(np.abs(est.mean - mean) <= 4 * np.sqrt(np.diag(cov) / N))
    se = np.sqrt((cov ** 2 + np.outer(np.diag(cov), np.diag(cov))) / N)
    assert np.all(np.abs(est.cov - cov) <= 4 * se)


def test_density_mean_is_order_insensitive():
    rng = np.random.default_rng(8)
    samples = rng.normal(size=(100, 3))
    ref = None
    for _ in range(5):
        est = OutputDensityEstimate(p=1, step=2)
        for v in rng.permutation(samples):
            est = learn_output_density(est, v)
        ref = est.mean if ref is None else ref
        np.testing.assert_allclose(est.mean, ref, atol=1e-10)


def test_density_merge_matches_pooled_samples():
    rng = np.random.default_rng(9)
    a, b = rng.normal(size=(40, 2)), rng.normal(size=(60, 2))
    merged = OutputDensityEstimate.from_samples(a, p=2).merge(OutputDensityEstimate.from_samples(b, p=2))
    pooled = OutputDensityEstimate.from_samples(np.vstack([a, b]), p=2)
    np.testing.assert_allclose(merged.mean, pooled.mean, atol=1e-12)
    np.testing.assert_allclose(merged.cov, pooled.cov, atol=1e-12)


def test_density_prefix():
    samples = np.arange(12.0).reshape(4, 3)
    est = OutputDensityEstimate.from_samples(samples, p=1)
    assert est.prefix(1).mean.tolist() == pytest.approx([4.5, 5.5])


def _state_with(mixtures, prior=None):
    sys = TimeVaryingLinearSystem.constant(1, 1, 1, 1, 0, T=1)
    noise = NoiseSpec.independent(Dims(1, 1, 1, 1, 1, 1), [0.0], [[1.0]], [[1.0]], [[0.0]])
    return initial_information_state(sys, noise, [0.0], [0.0], mixtures=mixtures, prior=prior)


def test_factorize_single_episode_is_that_belief():
    b = GaussianBelief([0.3], [[0.2]])
    _, plant = factorize(_state_with((BeliefMixture(1).absorb(b),)))
    assert plant.mean[0] == 0.3 and plant.cov[0, 0] == 0.2


def test_factorize_total_variance():
    mix = BeliefMixture(1).absorb(GaussianBelief([1.0], [[0.0]])).absorb(GaussianBelief([-1.0], [[0.0]]))
    _, plant = factorize(_state_with((mix,)))
    assert plant.mean[0] == pytest.approx(0.0)
    assert plant.cov[0, 0] == pytest.approx(1.0)


def test_factorize_falls_back_to_prior():
    prior = GaussianBelief([5.0], [[1.0]])
    assert factorize(_state_with((BeliefMixture(1),), prior=prior))[1] is prior
    with pytest.raises(EmptyDensity):
        factorize(_state_with((BeliefMixture(1),)))


def test_factorize_mixture_moments():
    rng = np.random.default_rng(4)
    means = rng.normal(size=(30, 2))
    covs = [np.diag(rng.uniform(0.1, 1.0, size=2)) for _ in range(30)]
    mix = BeliefMixture(2)
    for m, c in zip(means, covs):
        mix = mix.absorb(GaussianBelief(m, c))
    _, plant = factorize(_state_with((mix,)))
    np.testing.assert_allclose(plant.mean, means.mean(axis=0), atol=1e-12)
    assert np.linalg.eigvalsh(plant.cov).min() >= 0
    batch = BeliefMixture(2).absorb_batch(means[:10], covs[0]).merge(BeliefMixture(2).absorb_batch(means[10:], covs[0]))
    np.testing.assert_allclose(batch.mean, means.mean(axis=0), atol=1e-12)


def test_response_regressor_recovers_coefficients():
    rng = np.random.default_rng(6)
    theta = rng.normal(size=(4, 2))
    X = np.hstack([rng.normal(size=(500, 3)), np.ones((500, 1))])
    Y = X @ theta
    reg = ResponseRegressor(4, 2)
    reg.update_batch(X[:300], Y[:300])
    for x, y in zip(X[300:], Y[300:]):
        reg.update(x, y)
    np.testing.assert_allclose(reg.coef, theta, atol=1e-8)
    assert np.all(reg.residual_variance() <= 1e-9)
