import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import angle, central_difference, rel_err
from problems import random_policy_problem
from gaepg.advantage import GaeConfig, batch_policy_gradient, process_trajectory
from gaepg.envs import Trajectory
from gaepg.nn import MlpSpec
from gaepg.policy import CategoricalPolicy, mean_kl
from gaepg.trpo import (
    CGDivergence, PolicyBatch, TrustRegionConfig, conjugate_gradient, surrogate_grad,
    surrogate_loss, trpo_step,
)


def test_config_validation():
    for bad in (dict(epsilon=0.0), dict(cg_tol=-1.0), dict(backtrack_ratio=1.0)):
        with pytest.raises(ValueError):
            TrustRegionConfig(**bad)


def test_cg_identity_one_iteration():
    b = np.array([1.0, -2.0, 3.0])
    res = conjugate_gradient(lambda v: v, b, iters=10)
    np.testing.assert_allclose(res.x, b)
    assert res.iterations == 1


def test_cg_zero_rhs():
    res = conjugate_gradient(lambda v: 2 * v, np.zeros(4))
    assert np.all(res.x == 0) and res.iterations == 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_cg_matches_dense_solve(seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(8, 8))
    A = M @ M.T + 0.5 * np.eye(8)
    b = rng.normal(size=8)
    res = conjugate_gradient(lambda v: A @ v, b, iters=50, tol=1e-14)
    np.testing.assert_allclose(res.x, np.linalg.solve(A, b), atol=1e-8)


def test_cg_divergence():
    with pytest.raises(CGDivergence):
        conjugate_gradient(lambda v: v * np.nan, np.ones(2))


def test_surrogate_at_old_params_is_mean_advantage(rng):
    policy, params, batch = random_policy_problem(rng)
    assert surrogate_loss(policy, params, batch) == pytest.approx(batch.advantages.mean(), abs=1e-12)


def test_zero_advantages(rng):
    policy, params, batch = random_policy_problem(rng)
    batch.advantages[:] = 0.0
    assert surrogate_loss(policy, params + 0.1, batch) == 0.0
    assert np.all(surrogate_grad(policy, params, batch) == 0.0)
    new, info = trpo_step(policy, params, batch)
    assert np.array_equal(new, params) and not info.accepted


def test_empty_batch_rejected(rng):
    policy, params, batch = random_policy_problem(rng)
    empty = PolicyBatch(batch.states[:0], batch.actions[:0], batch.old_log_probs[:0], batch.advantages[:0])
    with pytest.raises(ValueError):
        trpo_step(policy, params, empty)


@pytest.mark.parametrize("kind", ["gaussian", "categorical"])
def test_surrogate_gradient_matches_finite_difference(kind):
    rng = np.random.default_rng(8)
    for _ in range(5):
        policy, params, batch = random_policy_problem(rng, kind)
        fd = central_difference(lambda p: surrogate_loss(policy, p, batch), params)
        assert rel_err(surrogate_grad(policy, params, batch), fd) < 1e-6


def test_surrogate_gradient_equals_batch_gradient(rng):
    policy, params, batch = random_policy_problem(rng, "categorical")
    # split the batch into two "episodes" and run the estimator path
    processed = []
    for lo, hi in ((0, 30), (30, len(batch))):
        states = np.vstack([batch.states[lo:hi], batch.states[hi - 1:hi]])
        tr = Trajectory(states, batch.actions[lo:hi], np.zeros(hi - lo), batch.old_log_probs[lo:hi], False)
        p = process_trajectory(tr, np.zeros(hi - lo + 1), GaeConfig(1.0, 1.0))
        p.advantages = batch.advantages[lo:hi]
        processed.append(p)
    g = batch_policy_gradient(processed, policy, params, per="timestep").gradient
    np.testing.assert_allclose(surrogate_grad(policy, params, batch), g, atol=1e-10)


def test_bandit_direction_is_natural_gradient():
    policy = CategoricalPolicy(MlpSpec(1, (), 2, use_bias=False))
    params = np.array([0.3, -0.4])
    rng = np.random.default_rng(0)
    states = np.ones((500, 1))
    actions, logp = policy.sample_batch(params, states, rng)
    adv = np.where(actions == 0, 1.0, -0.5) + rng.normal(scale=0.1, size=500)
    batch = PolicyBatch(states, actions, logp, adv)
    p = policy.probs(params, states[:1])[0]
    F = np.diag(p) - np.outer(p, p)
    g = surrogate_grad(policy, params, batch)
    _, info = trpo_step(policy, params, batch, TrustRegionConfig(epsilon=0.01))
    assert angle(info.direction, np.linalg.pinv(F) @ g) < 1e-4


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_accepted_steps_respect_trust_region(seed):
    rng = np.random.default_rng(seed)
    policy, params, batch = random_policy_problem(rng)
    eps = float(rng.uniform(1e-3, 0.05))
    new, info = trpo_step(policy, params, batch, TrustRegionConfig(epsilon=eps))
    if info.accepted:
        assert mean_kl(policy, params, new, batch.states) <= eps + 1e-6
        assert surrogate_loss(policy, new, batch) >= surrogate_loss(policy, params, batch)
        assert info.kl == pytest.approx(mean_kl(policy, params, new, batch.states))
    else:
        assert np.array_equal(new, params)


def test_full_step_kl_matches_quadratic_model():
    # linear policies keep the KL close to its quadratic model at this radius
    rng = np.random.default_rng(21)
    eps = 0.01
    for kind in ("gaussian", "categorical"):
        for _ in range(10):
            policy, params, batch = random_policy_problem(rng, kind, n=200, linear=True)
            _, info = trpo_step(policy, params, batch, TrustRegionConfig(epsilon=eps, cg_iters=50))
            assert 0.5 * eps <= info.full_step_kl <= 1.5 * eps
