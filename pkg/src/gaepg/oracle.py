"""Exact ground truth on small tabular MDPs.

Everything here is computed either by dense linear algebra or by brute-force
enumeration of every trajectory with its probability, so the results carry
no Monte Carlo noise. Policies are :class:`~gaepg.policy.CategoricalPolicy`
instances fed one-hot state features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import advantage as adv_mod
from .envs import TabularMDP
from .nn import MlpSpec
from .policy import CategoricalPolicy

MAX_PATHS = 10 ** 7


class EnumerationTooLarge(ValueError):
    pass


@dataclass
class TabularSolution:
    v: np.ndarray
    q: np.ndarray
    adv: np.ndarray
    gamma: float


def tabular_policy(mdp: TabularMDP, use_bias: bool = True) -> CategoricalPolicy:
    return CategoricalPolicy(MlpSpec(mdp.n_states, (), mdp.n_actions, use_bias=use_bias))


def action_probs(policy, params, mdp: TabularMDP) -> np.ndarray:
    """``pi[s, a]`` for every state, evaluated on one-hot features."""
    return policy.probs(params, np.eye(mdp.n_states))


def score_table(policy, params, mdp: TabularMDP) -> np.ndarray:
    """``psi[s, a] = grad log pi(a | s)``, shape ``(S, A, n_params)``."""
    eye = np.eye(mdp.n_states)
    return np.array([[policy.log_prob_grad(params, eye[s], a) for a in range(mdp.n_actions)]
                     for s in range(mdp.n_states)])


def _policy_averages(mdp, pi):
    rbar = mdp.expected_reward()
    r_pi = np.sum(pi * rbar, axis=1)
    P_pi = np.einsum("sa,sat->st", pi, mdp.transition)
    return rbar, r_pi, P_pi


def solve_values(mdp: TabularMDP, pi: np.ndarray, gamma: float) -> TabularSolution:
    """Exact ``V``, ``Q`` and ``A`` under action probabilities ``pi[s, a]``.

    Terminal states are pinned to value 0 and the Bellman system is solved
    densely over the remaining states. ``gamma = 1`` is accepted only when
    every nonterminal state is transient (spectral radius below 1).
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    pi = np.asarray(pi, dtype=np.float64)
    rbar, r_pi, P_pi = _policy_averages(mdp, pi)
    live = mdp.nonterminal
    P_ll = P_pi[np.ix_(live, live)]
    if gamma == 1.0 and live.any():
        radius = np.max(np.abs(np.linalg.eigvals(P_ll)))
        if radius >= 1.0 - 1e-12:
            raise np.linalg.LinAlgError(
                "gamma = 1 needs every nonterminal state to reach a terminal state "
                f"(spectral radius {radius:.6f})"
            )
    v = np.zeros(mdp.n_states)
    if live.any():
        v[live] = np.linalg.solve(np.eye(live.sum()) - gamma * P_ll, r_pi[live])
    q = rbar + gamma * mdp.transition @ v
    q[~live] = 0.0
    return TabularSolution(v=v, q=q, adv=q - v[:, None], gamma=gamma)


def shape_mdp(mdp: TabularMDP, potential, gamma: float) -> TabularMDP:
    """MDP with reward ``r + gamma Phi(s') - Phi(s)``; Phi is zeroed on terminal states."""
    phi = np.asarray(potential, dtype=np.float64).copy()
    phi[list(mdp.terminal_states)] = 0.0
    reward = mdp.reward + gamma * phi[None, None, :] - phi[:, None, None]
    for s in mdp.terminal_states:
        reward[s] = mdp.reward[s]
    return TabularMDP(mdp.transition, reward, mdp.initial_dist, mdp.terminal_states, mdp.horizon_cap)


@dataclass
class Path:
    prob: float
    states: list[int]
    actions: list[int]
    rewards: np.ndarray
    terminal: bool


def enumerate_paths(mdp: TabularMDP, pi: np.ndarray, horizon: int) -> list[Path]:
    """Every trajectory of at most ``horizon`` steps with nonzero probability."""
    branching = mdp.n_states * mdp.n_actions
    if float(branching) ** horizon > MAX_PATHS:
        raise EnumerationTooLarge(
            f"({mdp.n_actions} actions x {mdp.n_states} states)^{horizon} paths exceeds {MAX_PATHS}"
        )
    terminal = set(mdp.terminal_states)
    out: list[Path] = []

    def walk(prob, states, actions, rewards):
        s = states[-1]
        if s in terminal or len(actions) == horizon:
            out.append(Path(prob, list(states), list(actions), np.array(rewards, dtype=np.float64), s in terminal))
            return
        for a in range(mdp.n_actions):
            pa = pi[s, a]
            if pa == 0.0:
                continue
            for nxt in np.flatnonzero(mdp.transition[s, a]):
                p = pa * mdp.transition[s, a, nxt]
                walk(prob * p, states + [int(nxt)], actions + [a], rewards + [mdp.reward[s, a, nxt]])

    for s0 in np.flatnonzero(mdp.initial_dist):
        walk(mdp.initial_dist[s0], [int(s0)], [], [])
    return out


def _checked_paths(mdp, pi, horizon):
    paths = enumerate_paths(mdp, pi, horizon)
    unfinished = sum(p.prob for p in paths if not p.terminal)
    if unfinished > 1e-12:
        raise ValueError(
            f"probability {unfinished:.3g} of episodes still running at horizon {horizon}; "
            "exact expectations need every episode to terminate"
        )
    return paths


@dataclass(frozen=True)
class EstimatorKind:
    """Which advantage estimate to weight the score vectors with.

    ``tag`` is one of: total_reward, reward_to_go, baselined_reward_to_go,
    q_value, advantage, td_residual, k_step, gae, discounted_return,
    shaped_sum. ``k`` applies to k_step, ``lam`` to gae and shaped_sum,
    ``potential`` to shaped_sum.
    """

    tag: str
    k: int | None = None
    lam: float | None = None
    potential: tuple[float, ...] | None = None

    TAGS = (
        "total_reward", "reward_to_go", "baselined_reward_to_go", "q_value", "advantage",
        "td_residual", "k_step", "gae", "discounted_return", "shaped_sum",
    )

    def __post_init__(self):
        if self.tag not in self.TAGS:
            raise ValueError(f"unknown estimator {self.tag!r}")
        if self.tag == "k_step" and (self.k is None or self.k < 1):
            raise ValueError("k_step needs k >= 1")
        if self.tag in ("gae", "shaped_sum") and (self.lam is None or not 0 <= self.lam <= 1):
            raise ValueError(f"{self.tag} needs lam in [0, 1]")
        if self.tag == "shaped_sum" and self.potential is None:
            raise ValueError("shaped_sum needs a potential")

    def __str__(self):
        if self.tag == "k_step":
            return f"k_step(k={self.k})"
        if self.tag in ("gae", "shaped_sum"):
            return f"{self.tag}(lam={self.lam:g})"
        return self.tag


def path_advantages(kind: EstimatorKind, path: Path, sol: TabularSolution, value_fn, gamma: float) -> np.ndarray:
    """Advantage estimates along one enumerated path."""
    s = np.array(path.states)
    a = np.array(path.actions, dtype=int)
    r = path.rewards
    T = len(a)
    vals = None if value_fn is None else np.asarray(value_fn, dtype=np.float64)[s]
    tag = kind.tag
    if tag == "total_reward":
        return np.full(T, r.sum())
    if tag == "reward_to_go":
        return adv_mod.discounted_cumsum(r, 1.0)
    if tag == "baselined_reward_to_go":
        return adv_mod.discounted_cumsum(r, 1.0) - vals[:-1]
    if tag == "q_value":
        return sol.q[s[:-1], a]
    if tag == "advantage":
        return sol.adv[s[:-1], a]
    if tag == "discounted_return":
        return adv_mod.discounted_cumsum(r, gamma)
    if tag == "td_residual":
        return adv_mod.td_residuals(r, vals, gamma, path.terminal)
    if tag == "k_step":
        return adv_mod.k_step_advantage(r, vals, gamma, kind.k, path.terminal)
    if tag == "gae":
        return adv_mod.gae(r, vals, adv_mod.GaeConfig(gamma, kind.lam), path.terminal)
    if tag == "shaped_sum":
        phi = np.asarray(kind.potential, dtype=np.float64)[s]
        shaped = adv_mod.shape_rewards(r, phi, gamma, path.terminal)
        return adv_mod.discounted_cumsum(shaped, gamma * kind.lam)
    raise AssertionError(tag)


@dataclass
class EstimatorMoments:
    mean: np.ndarray
    variance: float


def exact_estimator_moments(mdp, policy, params, kind: EstimatorKind, value_fn, gamma: float,
                            horizon: int, baseline=None) -> EstimatorMoments:
    """Exact mean and total variance of ``sum_t A_hat_t grad log pi(a_t | s_t)``.

    ``baseline``, if given, is called as ``baseline(states[:t+1], actions[:t])``
    and subtracted from each ``A_hat_t``.
    """
    pi = action_probs(policy, params, mdp)
    sol = solve_values(mdp, pi, gamma)
    psi = score_table(policy, params, mdp)
    paths = _checked_paths(mdp, pi, horizon)
    mean = np.zeros(policy.n_params)
    second = 0.0
    for path in paths:
        a_hat = path_advantages(kind, path, sol, value_fn, gamma)
        if baseline is not None:
            a_hat = a_hat - np.array([baseline(tuple(path.states[:t + 1]), tuple(path.actions[:t]))
                                      for t in range(len(path.actions))])
        x = np.zeros(policy.n_params)
        for t, (s, a) in enumerate(zip(path.states[:-1], path.actions)):
            x += a_hat[t] * psi[s, a]
        mean += path.prob * x
        second += path.prob * (x @ x)
    return EstimatorMoments(mean, float(max(second - mean @ mean, 0.0)))


def exact_estimator_expectation(mdp, policy, params, kind: EstimatorKind, value_fn, gamma: float,
                                horizon: int, baseline=None) -> np.ndarray:
    return exact_estimator_moments(mdp, policy, params, kind, value_fn, gamma, horizon, baseline).mean


def exact_policy_gradient(mdp, policy, params, gamma: float, horizon: int) -> np.ndarray:
    """``g^gamma = E[sum_t A^{pi,gamma}(s_t, a_t) grad log pi(a_t | s_t)]`` by enumeration."""
    pi = action_probs(policy, params, mdp)
    sol = solve_values(mdp, pi, gamma)
    psi = score_table(policy, params, mdp)
    g = np.zeros(policy.n_params)
    for path in _checked_paths(mdp, pi, horizon):
        for s, a in zip(path.states[:-1], path.actions):
            g += path.prob * sol.adv[s, a] * psi[s, a]
    return g


def expected_visits(mdp: TabularMDP, pi: np.ndarray, horizon: int) -> np.ndarray:
    """Expected number of decisions taken in each state within ``horizon`` steps."""
    _, _, P_pi = _policy_averages(mdp, pi)
    live = mdp.nonterminal.astype(float)
    d = mdp.initial_dist * live
    visits = np.zeros(mdp.n_states)
    for _ in range(horizon):
        visits += d
        d = (d @ P_pi) * live
    return visits


def exact_fisher_matrix(mdp, policy, params, horizon: int) -> np.ndarray:
    """Visitation-weighted Fisher ``sum_s d(s) E_a[psi psi^T]`` assembled densely."""
    pi = action_probs(policy, params, mdp)
    psi = score_table(policy, params, mdp)
    d = expected_visits(mdp, pi, horizon)
    return np.einsum("s,sa,sai,saj->ij", d, pi, psi, psi)


def expected_return(mdp, pi, gamma: float = 1.0) -> float:
    """Expected discounted return from the initial distribution."""
    return float(mdp.initial_dist @ solve_values(mdp, pi, gamma).v)


@dataclass
class Certification:
    certified: bool
    gap: float
    expectation: np.ndarray
    target: np.ndarray


def certify_gamma_just(mdp, policy, params, kind: EstimatorKind, value_fn, gamma: float, tol: float = 1e-9,
                       horizon: int | None = None, baseline=None) -> Certification:
    """Is ``kind`` gamma-just here? Compares exact expectations to ``g^gamma``."""
    horizon = mdp.n_states if horizon is None else horizon
    target = exact_policy_gradient(mdp, policy, params, gamma, horizon)
    got = exact_estimator_expectation(mdp, policy, params, kind, value_fn, gamma, horizon, baseline)
    gap = float(np.linalg.norm(got - target))
    return Certification(gap <= tol, gap, got, target)


def response_function(mdp: TabularMDP, pi: np.ndarray, s: int, a: int, max_l: int) -> np.ndarray:
    """``chi(l) = E[r_l | s_0=s, a_0=a] - E[r_l | s_0=s]`` for ``l = 0..max_l``."""
    if max_l < 0:
        raise ValueError("max_l must be >= 0")
    rbar, r_pi, P_pi = _policy_averages(mdp, np.asarray(pi, dtype=np.float64))
    chi = np.zeros(max_l + 1)
    chi[0] = rbar[s, a] - pi[s] @ rbar[s]
    d_action = mdp.transition[s, a].copy()
    d_state = pi[s] @ mdp.transition[s]
    for l in range(1, max_l + 1):
        chi[l] = (d_action - d_state) @ r_pi
        d_action = d_action @ P_pi
        d_state = d_state @ P_pi
    return chi


@dataclass
class CompatibleFit:
    direction: np.ndarray
    rank: int
    rank_deficient: bool


def compatible_features_natural_gradient(scores, advantages, weights=None, rcond: float = 1e-10) -> CompatibleFit:
    """Least-squares ``r`` minimizing ``sum_t w_t (r . psi_t - A_t)^2``.

    Rank-deficient designs fall back to the minimum-norm solution, which is
    reported through ``rank_deficient``.
    """
    X = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    y = np.asarray(advantages, dtype=np.float64).reshape(-1)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=np.float64)
    sw = np.sqrt(w)
    r, _, rank, _ = np.linalg.lstsq(X * sw[:, None], y * sw, rcond=rcond)
    return CompatibleFit(r, int(rank), int(rank) < X.shape[1])


def enumerated_compatible_features(mdp, policy, params, gamma: float, horizon: int,
                                   kind: EstimatorKind = EstimatorKind("advantage"), value_fn=None) -> CompatibleFit:
    """Compatible-features regression over every (path, t), weighted by path probability."""
    pi = action_probs(policy, params, mdp)
    sol = solve_values(mdp, pi, gamma)
    psi = score_table(policy, params, mdp)
    rows, targets, weights = [], [], []
    for path in _checked_paths(mdp, pi, horizon):
        a_hat = path_advantages(kind, path, sol, value_fn, gamma)
        for t, (s, a) in enumerate(zip(path.states[:-1], path.actions)):
            rows.append(psi[s, a])
            targets.append(a_hat[t])
            weights.append(path.prob)
    return compatible_features_natural_gradient(np.array(rows), np.array(targets), np.array(weights))


def random_episodic_mdp(rng: np.random.Generator, n_states: int = 4, n_actions: int = 3,
                        reward_scale: float = 1.0) -> TabularMDP:
    """Random MDP whose last state is terminal and whose transitions only move forward.

    Every episode therefore ends within ``n_states - 1`` steps, which keeps
    exhaustive enumeration exact.
    """
    if n_states < 2:
        raise ValueError("need at least one nonterminal state and the terminal state")
    S, A = n_states, n_actions
    P = np.zeros((S, A, S))
    R = np.zeros((S, A, S))
    for s in range(S - 1):
        for a in range(A):
            P[s, a, s + 1:] = rng.dirichlet(np.ones(S - s - 1))
            R[s, a, s + 1:] = rng.normal(scale=reward_scale, size=S - s - 1)
    P[S - 1, :, S - 1] = 1.0
    init = np.zeros(S)
    init[: S - 1] = rng.dirichlet(np.ones(S - 1))
    return TabularMDP(P, R, init, (S - 1,), horizon_cap=S)
