"""Stochastic policies: diagonal Gaussian (continuous) and categorical (tabular).

Both classes are stateless: parameters are passed in as flat vectors so that
old/new parameter sets can be compared freely (surrogates, KL, line search).
Batched methods take ``states`` as an ``(N, obs_dim)`` array.
"""

from __future__ import annotations

import numpy as np

from .nn import MlpSpec, forward, grad_params, jacobian_vector_products

LOG_2PI = np.log(2.0 * np.pi)


class GaussianPolicy:
    """Gaussian policy with an MLP mean and state-independent log-std.

    The parameter vector is ``[mean-net params, log_std]``.
    """

    def __init__(self, mean_spec: MlpSpec, init_log_std: float = 0.0):
        self.mean_spec = mean_spec
        self.action_dim = mean_spec.output_dim
        self.init_log_std = init_log_std

    @property
    def n_params(self) -> int:
        return self.mean_spec.n_params + self.action_dim

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        mean = self.mean_spec.init_params(rng, output_scale=0.01)
        return np.concatenate([mean, np.full(self.action_dim, float(self.init_log_std))])

    def split(self, params):
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} policy parameters, got shape {params.shape}")
        k = self.mean_spec.n_params
        return params[:k], params[k:]

    def mean(self, params, states) -> np.ndarray:
        mean_params, _ = self.split(params)
        return forward(self.mean_spec, mean_params, states)

    def mode(self, params, state) -> np.ndarray:
        return self.mean(params, state)

    def sample(self, params, state, rng: np.random.Generator):
        """Draw one action; returns ``(action, log_prob)``."""
        actions, logp = self.sample_batch(params, np.atleast_2d(state), rng)
        return actions[0], float(logp[0])

    def sample_batch(self, params, states, rng: np.random.Generator):
        mean_params, log_std = self.split(params)
        mu = forward(self.mean_spec, mean_params, states)
        z = rng.standard_normal(mu.shape)
        actions = mu + np.exp(log_std) * z
        logp = -0.5 * np.sum(z ** 2, axis=1) - np.sum(log_std) - 0.5 * self.action_dim * LOG_2PI
        return actions, logp

    def log_prob(self, params, states, actions) -> np.ndarray:
        mean_params, log_std = self.split(params)
        mu = forward(self.mean_spec, mean_params, np.atleast_2d(states))
        z = (np.atleast_2d(actions) - mu) * np.exp(-log_std)
        return -0.5 * np.sum(z ** 2, axis=1) - np.sum(log_std) - 0.5 * self.action_dim * LOG_2PI

    def weighted_score(self, params, states, actions, weights) -> np.ndarray:
        """``sum_n weights[n] * grad log pi(actions[n] | states[n])``."""
        mean_params, log_std = self.split(params)
        states = np.atleast_2d(states)
        actions = np.asarray(actions, dtype=np.float64).reshape(len(states), self.action_dim)
        w = np.asarray(weights, dtype=np.float64)
        mu = forward(self.mean_spec, mean_params, states)
        inv_var = np.exp(-2.0 * log_std)
        diff = actions - mu
        g_mean = grad_params(self.mean_spec, mean_params, states, w[:, None] * diff * inv_var)
        g_log_std = w @ (diff ** 2 * inv_var - 1.0)
        return np.concatenate([g_mean, g_log_std])

    def log_prob_grad(self, params, state, action) -> np.ndarray:
        return self.weighted_score(params, np.atleast_2d(state), np.atleast_2d(action), np.ones(1))

    def score_matrix(self, params, states, actions) -> np.ndarray:
        """One score vector per row; used by oracles and small dense checks."""
        states = np.atleast_2d(states)
        actions = np.asarray(actions, dtype=np.float64).reshape(len(states), self.action_dim)
        return np.stack([self.log_prob_grad(params, s, a) for s, a in zip(states, actions)])

    def kl(self, old_params, new_params, states) -> np.ndarray:
        """Per-state KL(old || new) in closed form."""
        states = np.atleast_2d(states)
        mu0 = self.mean(old_params, states)
        mu1 = self.mean(new_params, states)
        ls0 = self.split(old_params)[1]
        ls1 = self.split(new_params)[1]
        var0, var1 = np.exp(2 * ls0), np.exp(2 * ls1)
        per_dim = ls1 - ls0 + (var0 + (mu0 - mu1) ** 2) / (2 * var1) - 0.5
        return per_dim.sum(axis=1)

    def fisher_vector_product(self, params, states, v, damping: float = 0.0) -> np.ndarray:
        """``(F + damping I) v`` with F the Hessian of the mean KL at ``params``.

        Gauss-Newton form: pull the Fisher metric of the output distribution
        (``1/sigma^2`` on the mean, ``2`` on each log-std) back through the
        mean network's Jacobian.
        """
        mean_params, log_std = self.split(params)
        states = np.atleast_2d(states)
        v = np.asarray(v, dtype=np.float64)
        vm, vls = v[: self.mean_spec.n_params], v[self.mean_spec.n_params:]
        jvp, vjp = jacobian_vector_products(self.mean_spec, mean_params, states)
        dmu = jvp(vm) * np.exp(-2.0 * log_std)
        out = np.concatenate([vjp(dmu) / len(states), 2.0 * vls])
        return out + damping * v


class CategoricalPolicy:
    """Softmax policy over ``n_actions`` with logits from an MLP."""

    def __init__(self, logits_spec: MlpSpec):
        self.logits_spec = logits_spec
        self.n_actions = logits_spec.output_dim

    @property
    def n_params(self) -> int:
        return self.logits_spec.n_params

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return self.logits_spec.init_params(rng, output_scale=0.01)

    def log_probs(self, params, states) -> np.ndarray:
        """``(N, n_actions)`` log-probabilities."""
        z = forward(self.logits_spec, params, np.atleast_2d(states))
        z = z - z.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def probs(self, params, states) -> np.ndarray:
        return np.exp(self.log_probs(params, states))

    def mode(self, params, state) -> int:
        return int(np.argmax(self.log_probs(params, state)[0]))

    def sample(self, params, state, rng: np.random.Generator):
        actions, logp = self.sample_batch(params, np.atleast_2d(state), rng)
        return int(actions[0]), float(logp[0])

    def sample_batch(self, params, states, rng: np.random.Generator):
        lp = self.log_probs(params, states)
        cdf = np.cumsum(np.exp(lp), axis=1)
        u = rng.random((len(lp), 1)) * cdf[:, -1:]
        actions = np.minimum((u > cdf).sum(axis=1), self.n_actions - 1)
        return actions, lp[np.arange(len(lp)), actions]

    def log_prob(self, params, states, actions) -> np.ndarray:
        lp = self.log_probs(params, states)
        actions = np.asarray(actions, dtype=int).reshape(-1)
        return lp[np.arange(len(lp)), actions]

    def weighted_score(self, params, states, actions, weights) -> np.ndarray:
        states = np.atleast_2d(states)
        actions = np.asarray(actions, dtype=int).reshape(-1)
        p = self.probs(params, states)
        onehot = np.zeros_like(p)
        onehot[np.arange(len(p)), actions] = 1.0
        cot = np.asarray(weights, dtype=np.float64)[:, None] * (onehot - p)
        return grad_params(self.logits_spec, params, states, cot)

    def log_prob_grad(self, params, state, action) -> np.ndarray:
        return self.weighted_score(params, np.atleast_2d(state), [action], np.ones(1))

    def score_matrix(self, params, states, actions) -> np.ndarray:
        states = np.atleast_2d(states)
        actions = np.asarray(actions, dtype=int).reshape(-1)
        return np.stack([self.log_prob_grad(params, s, a) for s, a in zip(states, actions)])

    def kl(self, old_params, new_params, states) -> np.ndarray:
        lp0 = self.log_probs(old_params, states)
        lp1 = self.log_probs(new_params, states)
        return np.sum(np.exp(lp0) * (lp0 - lp1), axis=1)

    def fisher_vector_product(self, params, states, v, damping: float = 0.0) -> np.ndarray:
        states = np.atleast_2d(states)
        v = np.asarray(v, dtype=np.float64)
        p = self.probs(params, states)
        jvp, vjp = jacobian_vector_products(self.logits_spec, params, states)
        dz = jvp(v)
        fz = p * dz - p * np.sum(p * dz, axis=1, keepdims=True)
        return vjp(fz) / len(states) + damping * v


def mean_kl(policy, old_params, new_params, states) -> float:
    """Average KL(pi_old(.|s) || pi_new(.|s)) over a nonempty batch of states."""
    states = np.atleast_2d(states)
    if len(states) == 0:
        raise ValueError("mean_kl needs at least one state")
    return float(np.mean(policy.kl(old_params, new_params, states)))
