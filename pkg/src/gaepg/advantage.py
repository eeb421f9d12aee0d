"""Advantage estimators over single trajectories and batches.

Sequences follow one convention throughout: ``rewards`` has length T and
``values`` has length T + 1 (the last entry is ``V(s_T)``). When an episode
ended in a true terminal state, ``V(s_T)`` is treated as 0; otherwise the
tail is bootstrapped from the given value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import lfilter

from .envs import Trajectory


@dataclass(frozen=True)
class GaeConfig:
    gamma: float = 0.99
    lam: float = 0.96

    def __post_init__(self):
        for name in ("gamma", "lam"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")


def discounted_cumsum(x, discount: float) -> np.ndarray:
    """``y[t] = sum_l discount**l * x[t + l]``, computed right to left."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        return x.copy()
    return lfilter([1.0], [1.0, -discount], x[::-1])[::-1]


def _bootstrap(rewards, values, terminal):
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (rewards.shape[0] + 1,):
        raise ValueError(f"need len(values) == len(rewards) + 1, got {values.shape[0]} and {rewards.shape[0]}")
    if terminal:
        values = values.copy()
        values[-1] = 0.0
    return rewards, values


def td_residuals(rewards, values, gamma: float, terminal: bool = True) -> np.ndarray:
    """``delta_t = r_t + gamma V(s_{t+1}) - V(s_t)``."""
    rewards, values = _bootstrap(rewards, values, terminal)
    return rewards + gamma * values[1:] - values[:-1]


def k_step_advantage(rewards, values, gamma: float, k: int, terminal: bool = True) -> np.ndarray:
    """Sum of the first ``k`` discounted TD residuals, cut at the episode end."""
    if k < 1:
        raise ValueError("k must be >= 1")
    deltas = td_residuals(rewards, values, gamma, terminal)
    T = len(deltas)
    out = np.zeros(T)
    for t in range(T):
        m = min(k, T - t)
        out[t] = np.dot(gamma ** np.arange(m), deltas[t:t + m])
    return out


def k_step_advantage_telescoped(rewards, values, gamma: float, k: int, terminal: bool = True) -> np.ndarray:
    """Same estimator as :func:`k_step_advantage` written as k-step return minus ``V(s_t)``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    rewards, values = _bootstrap(rewards, values, terminal)
    T = len(rewards)
    out = np.zeros(T)
    for t in range(T):
        m = min(k, T - t)
        ret = np.dot(gamma ** np.arange(m), rewards[t:t + m])
        out[t] = -values[t] + ret + gamma ** m * values[t + m]
    return out


def gae(rewards, values, config: GaeConfig, terminal: bool = True) -> np.ndarray:
    """Generalized advantage estimate ``sum_l (gamma*lam)**l delta_{t+l}``."""
    deltas = td_residuals(rewards, values, config.gamma, terminal)
    return discounted_cumsum(deltas, config.gamma * config.lam)


def value_targets(rewards, values, gamma: float, lam_v: float = 1.0, terminal: bool = True) -> np.ndarray:
    """Regression targets for the value function.

    ``lam_v = 1`` gives discounted returns (bootstrapped from ``V(s_T)`` on
    truncated episodes); other values give ``V(s_t) + GAE(gamma, lam_v)``.
    """
    if not 0.0 <= lam_v <= 1.0:
        raise ValueError(f"lam_v must lie in [0, 1], got {lam_v}")
    rewards, values = _bootstrap(rewards, values, terminal)
    if lam_v == 1.0:
        padded = np.append(rewards, values[-1])
        return discounted_cumsum(padded, gamma)[:-1]
    return values[:-1] + gae(rewards, values, GaeConfig(gamma, lam_v), terminal=False)


def shape_rewards(rewards, potentials, gamma: float, terminal: bool = True) -> np.ndarray:
    """Potential-based shaping ``r + gamma Phi(s') - Phi(s)``; Phi(terminal) = 0."""
    rewards, potentials = _bootstrap(rewards, potentials, terminal)
    return rewards + gamma * potentials[1:] - potentials[:-1]


@dataclass
class ProcessedTrajectory:
    trajectory: Trajectory
    values: np.ndarray
    deltas: np.ndarray
    advantages: np.ndarray
    value_targets: np.ndarray


def process_trajectory(traj: Trajectory, values, config: GaeConfig, lam_v: float = 1.0) -> ProcessedTrajectory:
    """Attach TD residuals, GAE advantages and value targets to one episode."""
    values = np.asarray(values, dtype=np.float64)
    deltas = td_residuals(traj.rewards, values, config.gamma, traj.terminal)
    advantages = discounted_cumsum(deltas, config.gamma * config.lam)
    targets = value_targets(traj.rewards, values, config.gamma, lam_v, traj.terminal)
    return ProcessedTrajectory(traj, values, deltas, advantages, targets)


def time_dependent_baseline_advantages(trajectories, gamma: float) -> list[np.ndarray]:
    """Discounted return-to-go minus its batch average at the same timestep.

    The baseline at step t averages over the episodes still running at t and
    never looks at the state.
    """
    returns = [value_targets(tr.rewards, np.zeros(len(tr) + 1), gamma, 1.0, True) for tr in trajectories]
    horizon = max((len(r) for r in returns), default=0)
    total = np.zeros(horizon)
    count = np.zeros(horizon)
    for r in returns:
        total[: len(r)] += r
        count[: len(r)] += 1
    baseline = total / np.maximum(count, 1)
    return [r - baseline[: len(r)] for r in returns]


def normalize_advantages(advantages: list[np.ndarray], eps: float = 1e-8) -> list[np.ndarray]:
    """Shift and scale a batch of advantage arrays to mean 0, std 1 jointly."""
    flat = np.concatenate(advantages) if advantages else np.zeros(0)
    if flat.size == 0:
        return advantages
    mean, std = flat.mean(), flat.std()
    return [(a - mean) / (std + eps) for a in advantages]


@dataclass
class GradientReport:
    gradient: np.ndarray
    norm: float
    adv_mean: float
    adv_std: float
    n_episodes: int
    n_timesteps: int
    bias_norm: float | None = None


def batch_policy_gradient(batch, policy, params, per: str = "episode") -> GradientReport:
    """``(1/N) sum_n sum_t A_t^n grad log pi(a_t^n | s_t^n)`` over processed trajectories.

    ``per="episode"`` divides by the number of episodes; ``per="timestep"``
    divides by the number of timesteps, which is the gradient of the
    importance-weighted surrogate at the sampling parameters.
    """
    if per not in ("episode", "timestep"):
        raise ValueError(f"per must be 'episode' or 'timestep', got {per!r}")
    batch = list(batch)
    states = np.concatenate([p.trajectory.states[:-1] for p in batch])
    actions = np.concatenate([p.trajectory.actions for p in batch])
    adv = np.concatenate([p.advantages for p in batch])
    grad = policy.weighted_score(params, states, actions, adv)
    grad = grad / (len(batch) if per == "episode" else len(adv))
    return GradientReport(
        gradient=grad,
        norm=float(np.linalg.norm(grad)),
        adv_mean=float(adv.mean()) if adv.size else 0.0,
        adv_std=float(adv.std()) if adv.size else 0.0,
        n_episodes=len(batch),
        n_timesteps=int(adv.size),
    )
