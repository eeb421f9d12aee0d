import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import angle
from problems import random_value_problem
from gaepg.nn import MlpSpec, forward
from gaepg.valuefit import (
    ValueFitConfig, compute_sigma_sq, fit_value_function, regression_objective,
    value_trust_region_step,
)


def test_config_validation():
    with pytest.raises(ValueError):
        ValueFitConfig(epsilon_v=0.0)
    with pytest.raises(ValueError):
        ValueFitConfig(n_steps=0)


def test_sigma_sq_examples():
    assert compute_sigma_sq([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert compute_sigma_sq([0.0, 0.0], [1.0, -1.0]) == 1.0
    rng = np.random.default_rng(2)
    a, b = rng.normal(size=17), rng.normal(size=17)
    assert compute_sigma_sq(a, b) == pytest.approx(sum((x - y) ** 2 for x, y in zip(a, b)) / 17, rel=1e-12)
    with pytest.raises(ValueError):
        compute_sigma_sq([], [])
    with pytest.raises(ValueError):
        compute_sigma_sq([1.0], [1.0, 2.0])


def test_perfect_fit_is_fixed_point(rng):
    spec, params, states, _ = random_value_problem(rng)
    targets = forward(spec, params, states)[:, 0]
    new, info = value_trust_region_step(spec, params, states, targets)
    assert np.array_equal(new, params) and not info.accepted


def test_stationary_point_is_fixed_point():
    # constant model already at the mean: gradient is zero but sigma^2 is not
    spec = MlpSpec(1, (), 1)
    params = np.array([0.0, 1.0])
    states = np.zeros((4, 1))
    new, info = value_trust_region_step(spec, params, states, np.array([0.0, 2.0, 0.0, 2.0]))
    assert np.array_equal(new, params) and info.sigma_sq == 1.0


def test_linear_direction_matches_normal_equations():
    rng = np.random.default_rng(4)
    for _ in range(5):
        d = int(rng.integers(1, 6))
        spec = MlpSpec(d, (), 1)
        params = rng.normal(size=spec.n_params)
        X = rng.normal(size=(30, d))
        y = rng.normal(size=30)
        J = np.hstack([X, np.ones((30, 1))])  # layout: W row then bias
        resid = y - forward(spec, params, X)[:, 0]
        dense = np.linalg.solve(J.T @ J, J.T @ resid)
        _, info = value_trust_region_step(spec, params, X, y, ValueFitConfig(cg_iters=50))
        assert angle(info.direction, dense) < 1e-4


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_step_contracts_on_random_mlps(seed):
    rng = np.random.default_rng(seed)
    spec, params, states, targets = random_value_problem(rng)
    eps = float(rng.uniform(1e-3, 0.1))
    new, info = value_trust_region_step(spec, params, states, targets, ValueFitConfig(epsilon_v=eps))
    v_old = forward(spec, params, states)[:, 0]
    v_new = forward(spec, new, states)[:, 0]
    realized = np.mean((v_new - v_old) ** 2) / (2 * compute_sigma_sq(v_old, targets))
    assert realized <= 1.2 * eps
    assert regression_objective(spec, new, states, targets) <= regression_objective(spec, params, states, targets)
    if info.accepted:
        assert info.constraint == pytest.approx(realized, rel=1e-12)


def test_constraint_is_mean_gaussian_kl(rng):
    spec, params, states, targets = random_value_problem(rng)
    new, info = value_trust_region_step(spec, params, states, targets)
    assert info.accepted
    mu1 = forward(spec, params, states)[:, 0]
    mu2 = forward(spec, new, states)[:, 0]
    s2 = info.sigma_sq
    # general KL(N(mu1, s1^2) || N(mu2, s2^2)) with s1 = s2
    kl = np.log(1.0) + (s2 + (mu1 - mu2) ** 2) / (2 * s2) - 0.5
    assert abs(np.mean(kl) - info.constraint) < 1e-10


def test_constant_model_converges_to_mean():
    spec = MlpSpec(1, (), 1)
    states = np.zeros((5, 1))
    targets = np.array([1.0, 4.0, -2.0, 3.0, 0.5])
    params, infos = fit_value_function(spec, np.zeros(2), states, targets, ValueFitConfig(n_steps=60))
    assert len(infos) == 60
    assert forward(spec, params, states[:1])[0, 0] == pytest.approx(targets.mean(), abs=1e-6)


def test_single_state_moves_toward_target_without_overshoot():
    spec = MlpSpec(1, (), 1)
    states = np.ones((3, 1))
    targets = np.full(3, 5.0)
    params = np.zeros(2)
    prev = 0.0
    for _ in range(20):
        params, _ = value_trust_region_step(spec, params, states, targets, ValueFitConfig(epsilon_v=1e-3))
        v = forward(spec, params, states[:1])[0, 0]
        assert prev <= v <= 5.0 + 1e-9
        prev = v
    assert prev > 0.0


def test_one_hot_features_converge_to_state_means():
    rng = np.random.default_rng(9)
    n_states = 4
    idx = rng.integers(0, n_states, size=200)
    states = np.eye(n_states)[idx]
    targets = rng.normal(size=n_states)[idx] + rng.normal(scale=0.5, size=200)
    spec = MlpSpec(n_states, (), 1)
    params, _ = fit_value_function(spec, np.zeros(spec.n_params), states, targets,
                                   ValueFitConfig(n_steps=300, cg_iters=20))
    means = np.array([targets[idx == s].mean() for s in range(n_states)])
    np.testing.assert_allclose(forward(spec, params, np.eye(n_states))[:, 0], means, atol=1e-3)
