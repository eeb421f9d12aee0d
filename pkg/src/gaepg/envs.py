"""Episodic environments: continuous-force cart-pole and finite tabular MDPs."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class EnvStep:
    next_state: np.ndarray
    reward: float
    terminal: bool
    truncated: bool = False


@dataclass
class Trajectory:
    """One episode. ``states`` has one more row than actions/rewards.

    ``terminal`` is True only when the environment reached a true terminal
    state; episodes cut off by a step limit keep ``terminal=False`` so that
    downstream code bootstraps from ``V(states[-1])``.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    log_probs: np.ndarray
    terminal: bool

    def __post_init__(self):
        T = len(self.rewards)
        if len(self.states) != T + 1 or len(self.actions) != T or len(self.log_probs) != T:
            raise ValueError(
                f"misaligned trajectory: {len(self.states)} states, {len(self.actions)} actions, "
                f"{T} rewards, {len(self.log_probs)} log-probs"
            )

    def __len__(self) -> int:
        return len(self.rewards)


def _generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# Cart-pole

GRAVITY = 9.8
CART_MASS = 1.0
POLE_MASS = 0.1
TOTAL_MASS = CART_MASS + POLE_MASS
HALF_LENGTH = 0.5
POLEMASS_LENGTH = POLE_MASS * HALF_LENGTH
FORCE_MAX = 10.0
DT = 0.02
ANGLE_LIMIT = 12 * 2 * math.pi / 360
POSITION_LIMIT = 2.4


def cartpole_derivatives(states: np.ndarray, force: np.ndarray) -> np.ndarray:
    """Time derivative of ``(x, x_dot, theta, theta_dot)`` rows under ``force``."""
    x_dot, theta, theta_dot = states[..., 1], states[..., 2], states[..., 3]
    sin, cos = np.sin(theta), np.cos(theta)
    temp = (force + POLEMASS_LENGTH * theta_dot ** 2 * sin) / TOTAL_MASS
    theta_acc = (GRAVITY * sin - cos * temp) / (
        HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos ** 2 / TOTAL_MASS)
    )
    x_acc = temp - POLEMASS_LENGTH * theta_acc * cos / TOTAL_MASS
    return np.stack([x_dot, x_acc, theta_dot, theta_acc], axis=-1)


def cartpole_integrate(states: np.ndarray, force: np.ndarray, dt: float = DT) -> np.ndarray:
    """One classical RK4 step with the force held constant over ``dt``."""
    k1 = cartpole_derivatives(states, force)
    k2 = cartpole_derivatives(states + 0.5 * dt * k1, force)
    k3 = cartpole_derivatives(states + 0.5 * dt * k2, force)
    k4 = cartpole_derivatives(states + dt * k3, force)
    return states + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def cartpole_failed(states: np.ndarray) -> np.ndarray:
    return (np.abs(states[..., 2]) > ANGLE_LIMIT) | (np.abs(states[..., 0]) > POSITION_LIMIT)


def cartpole_energy(state) -> float:
    """Mechanical energy (uniform-rod pole, pivot at cart) used for sanity checks."""
    _, x_dot, theta, theta_dot = state
    kinetic = (
        0.5 * TOTAL_MASS * x_dot ** 2
        + POLEMASS_LENGTH * x_dot * theta_dot * math.cos(theta)
        + 0.5 * (4.0 / 3.0) * POLE_MASS * HALF_LENGTH ** 2 * theta_dot ** 2
    )
    return kinetic + POLE_MASS * GRAVITY * HALF_LENGTH * math.cos(theta)


class CartPole:
    """Barto-parameter cart-pole with a continuous horizontal force action.

    Reward is +1 per surviving step and 0 on the transition that fails.
    """

    obs_dim = 4
    action_dim = 1
    discrete = False

    def __init__(self, max_steps: int = 1000):
        self.max_steps = max_steps
        self.state: np.ndarray | None = None
        self.done = True
        self.t = 0

    def reset(self, rng_seed=None) -> np.ndarray:
        rng = _generator(rng_seed)
        self.state = rng.uniform(-0.05, 0.05, size=4)
        self.done = False
        self.t = 0
        return self.state.copy()

    def set_state(self, state) -> None:
        self.state = np.asarray(state, dtype=np.float64).copy()
        self.done = False
        self.t = 0

    def step(self, action) -> EnvStep:
        if self.done or self.state is None:
            raise RuntimeError("episode is over; call reset() before step()")
        force = float(np.clip(np.ravel(action)[0], -FORCE_MAX, FORCE_MAX))
        self.state = cartpole_integrate(self.state, force)
        self.t += 1
        terminal = bool(cartpole_failed(self.state))
        truncated = not terminal and self.t >= self.max_steps
        self.done = terminal or truncated
        return EnvStep(self.state.copy(), 0.0 if terminal else 1.0, terminal, truncated)

    def rollout_batch(self, policy, params, n: int, max_steps: int, rng: np.random.Generator):
        """Run ``n`` independent episodes in lockstep and return Trajectories.

        Much faster than ``n`` calls to :func:`rollout` because policy and
        dynamics are evaluated on the whole live batch at once.
        """
        max_steps = min(max_steps, self.max_steps)
        states = np.zeros((max_steps + 1, n, 4))
        actions = np.zeros((max_steps, n, 1))
        rewards = np.zeros((max_steps, n))
        logps = np.zeros((max_steps, n))
        lengths = np.full(n, max_steps)
        terminal = np.zeros(n, dtype=bool)
        states[0] = rng.uniform(-0.05, 0.05, size=(n, 4))
        alive = np.arange(n)
        for t in range(max_steps):
            s = states[t, alive]
            a, lp = policy.sample_batch(params, s, rng)
            nxt = cartpole_integrate(s, np.clip(a[:, 0], -FORCE_MAX, FORCE_MAX))
            failed = cartpole_failed(nxt)
            states[t + 1, alive] = nxt
            actions[t, alive] = a
            logps[t, alive] = lp
            rewards[t, alive] = np.where(failed, 0.0, 1.0)
            if failed.any():
                ended = alive[failed]
                lengths[ended] = t + 1
                terminal[ended] = True
                alive = alive[~failed]
                if alive.size == 0:
                    break
        return [
            Trajectory(states[: L + 1, i].copy(), actions[:L, i].copy(), rewards[:L, i].copy(),
                       logps[:L, i].copy(), bool(terminal[i]))
            for i, L in enumerate(lengths)
        ]


# ---------------------------------------------------------------------------
# Tabular MDPs


@dataclass
class TabularMDP:
    """Finite MDP with explicit ``P[s, a, s']`` and ``R[s, a, s']`` tensors."""

    transition: np.ndarray
    reward: np.ndarray
    initial_dist: np.ndarray
    terminal_states: tuple[int, ...] = ()
    horizon_cap: int = 1000

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.reward = np.asarray(self.reward, dtype=np.float64)
        self.initial_dist = np.asarray(self.initial_dist, dtype=np.float64)
        self.terminal_states = tuple(sorted(int(s) for s in self.terminal_states))
        self.validate()

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def nonterminal(self) -> np.ndarray:
        mask = np.ones(self.n_states, dtype=bool)
        mask[list(self.terminal_states)] = False
        return mask

    def validate(self) -> None:
        S, A = self.transition.shape[:2]
        if self.transition.shape != (S, A, S) or self.reward.shape != (S, A, S):
            raise ValueError("transition and reward must both have shape (S, A, S)")
        if self.initial_dist.shape != (S,):
            raise ValueError("initial distribution must have one entry per state")
        if np.any(self.transition < 0) or np.max(np.abs(self.transition.sum(axis=2) - 1)) > 1e-12:
            raise ValueError("each P[s, a, :] must be a probability vector")
        if np.any(self.initial_dist < 0) or abs(self.initial_dist.sum() - 1) > 1e-12:
            raise ValueError("initial distribution must sum to 1")
        if not np.all(np.isfinite(self.reward)):
            raise ValueError("rewards must be finite")
        for s in self.terminal_states:
            if not 0 <= s < S:
                raise ValueError(f"terminal state {s} out of range")
            if np.any(self.transition[s, :, s] != 1.0) or np.any(self.reward[s, :, s] != 0.0):
                raise ValueError(f"terminal state {s} must self-loop with zero reward")

    def expected_reward(self) -> np.ndarray:
        """``R_bar[s, a] = sum_s' P[s, a, s'] R[s, a, s']``."""
        return np.einsum("ijk,ijk->ij", self.transition, self.reward)


def parse_mdp(text: str, horizon_cap: int = 1000) -> TabularMDP:
    """Parse the plain-text MDP format (see README). ``#`` starts a comment."""
    lines = [ln.split("#", 1)[0].strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError("empty MDP file")
    head = lines[0].split()
    if len(head) != 4 or head[0] != "states" or head[2] != "actions":
        raise ValueError(f"bad header line: {lines[0]!r}")
    S, A = int(head[1]), int(head[3])
    P = np.zeros((S, A, S))
    R = np.zeros((S, A, S))
    seen = set()
    init = None
    terminal: tuple[int, ...] = ()
    for line in lines[1:]:
        if line.startswith("init:"):
            init = np.array([float(v) for v in line[5:].split()])
        elif line.startswith("terminal:"):
            terminal = tuple(int(v) for v in line[9:].split())
        else:
            lhs, sep, rhs = line.partition(":")
            if not sep:
                raise ValueError(f"cannot parse line: {line!r}")
            s, a = (int(v) for v in lhs.split())
            seen.add((s, a))
            for item in rhs.split(";"):
                parts = item.split()
                if not parts:
                    continue
                if len(parts) != 3:
                    raise ValueError(f"outcome must be 's p r', got {item!r}")
                nxt, p, r = int(parts[0]), float(parts[1]), float(parts[2])
                P[s, a, nxt] += p
                R[s, a, nxt] = r
    if init is None:
        raise ValueError("missing 'init:' line")
    for s in terminal:
        for a in range(A):
            if (s, a) not in seen:
                P[s, a, s] = 1.0
    missing = [(s, a) for s in range(S) for a in range(A) if s not in terminal and (s, a) not in seen]
    if missing:
        raise ValueError(f"no transitions given for (state, action) pairs {missing}")
    return TabularMDP(P, R, init, terminal, horizon_cap)


def load_mdp(path, horizon_cap: int = 1000) -> TabularMDP:
    return parse_mdp(Path(path).read_text(encoding="utf-8"), horizon_cap)


def format_mdp(mdp: TabularMDP) -> str:
    lines = [f"states {mdp.n_states} actions {mdp.n_actions}"]
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            outs = [
                f"{n} {float(mdp.transition[s, a, n])!r} {float(mdp.reward[s, a, n])!r}"
                for n in range(mdp.n_states) if mdp.transition[s, a, n] > 0
            ]
            lines.append(f"{s} {a} : " + " ; ".join(outs))
    lines.append("init: " + " ".join(repr(float(p)) for p in mdp.initial_dist))
    lines.append("terminal: " + " ".join(str(s) for s in mdp.terminal_states))
    return "\n".join(lines) + "\n"


class TabularEnv:
    """Episodic wrapper around a :class:`TabularMDP` with one-hot observations."""

    discrete = True

    def __init__(self, mdp: TabularMDP):
        self.mdp = mdp
        self.obs_dim = mdp.n_states
        self.n_actions = mdp.n_actions
        self.max_steps = mdp.horizon_cap
        self.state_index: int | None = None
        self.done = True
        self.t = 0
        self._rng = np.random.default_rng()
        self._terminal = set(mdp.terminal_states)
        self._init_cdf = np.cumsum(mdp.initial_dist)
        self._cdf = np.cumsum(mdp.transition, axis=2)

    def observe(self, index: int) -> np.ndarray:
        obs = np.zeros(self.obs_dim)
        obs[index] = 1.0
        return obs

    def _draw(self, cdf) -> int:
        u = self._rng.random() * cdf[-1]
        return min(int(np.searchsorted(cdf, u, side="right")), len(cdf) - 1)

    def sample_next(self, s: int, a: int) -> int:
        return self._draw(self._cdf[s, a])

    def set_state(self, index: int) -> None:
        self.state_index = int(index)
        self.done = self.state_index in self._terminal
        self.t = 0

    def reset(self, rng_seed=None) -> np.ndarray:
        self._rng = _generator(rng_seed)
        self.state_index = self._draw(self._init_cdf)
        self.done = self.state_index in self._terminal
        self.t = 0
        return self.observe(self.state_index)

    def step(self, action) -> EnvStep:
        if self.done or self.state_index is None:
            raise RuntimeError("episode is over; call reset() before step()")
        s, a = self.state_index, int(np.ravel(action)[0])
        nxt = self.sample_next(s, a)
        reward = float(self.mdp.reward[s, a, nxt])
        self.state_index = nxt
        self.t += 1
        terminal = nxt in self._terminal
        truncated = not terminal and self.t >= self.max_steps
        self.done = terminal or truncated
        return EnvStep(self.observe(nxt), reward, terminal, truncated)


def rollout(env, policy, params, max_steps: int, rng_seed=None) -> Trajectory:
    """Run one episode of ``policy`` in ``env`` for at most ``max_steps`` steps.

    A single generator seeded from ``rng_seed`` drives the initial state, the
    environment's transitions and the action noise, so a fixed seed gives a
    bit-identical trajectory.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    rng = _generator(rng_seed)
    state = env.reset(rng)
    states, actions, rewards, logps = [state], [], [], []
    terminal = getattr(env, "done", False)
    for _ in range(max_steps):
        if terminal:
            break
        action, logp = policy.sample(params, state, rng)
        out = env.step(action)
        actions.append(action)
        logps.append(logp)
        rewards.append(out.reward)
        states.append(out.next_state)
        state = out.next_state
        terminal = out.terminal
        if out.truncated:
            break
    if env.discrete:
        act_arr = np.array(actions, dtype=int)
    else:
        act_arr = np.array(actions, dtype=np.float64).reshape(len(actions), env.action_dim)
    return Trajectory(np.array(states), act_arr, np.array(rewards, dtype=np.float64),
                      np.array(logps, dtype=np.float64), bool(terminal))
