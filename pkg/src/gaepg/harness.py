"""Training loop, gamma x lambda sweeps and learning-curve output."""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import advantage as A
from .config import ExperimentConfig, copy_config
from .envs import CartPole, TabularEnv, load_mdp, rollout
from .nn import MlpSpec, forward, save_checkpoint
from .policy import CategoricalPolicy, GaussianPolicy
from .trpo import PolicyBatch, trpo_step
from .valuefit import fit_value_function

log = logging.getLogger(__name__)

# episodes launched per round when filling a timestep budget; fixed so results
# do not depend on the worker count
TIMESTEP_CHUNK = 8

CSV_COLUMNS = ("iter", "mean_cost", "mean_ep_len", "kl", "surrogate_improve", "vf_loss_pre", "vf_loss_post", "wall_s")


class TrainingError(RuntimeError):
    def __init__(self, iteration: int, cause: BaseException):
        super().__init__(f"training aborted at iteration {iteration}: {cause!r}")
        self.iteration = iteration


@dataclass
class IterationRecord:
    iter: int
    mean_cost: float
    mean_ep_len: float
    kl: float
    surrogate_improve: float
    vf_loss_pre: float
    vf_loss_post: float
    wall_s: float

    def row(self):
        return [getattr(self, c) for c in CSV_COLUMNS]


@dataclass
class TrainResult:
    records: list[IterationRecord]
    policy_params: np.ndarray
    value_params: np.ndarray
    policy: object = field(repr=False)
    value_spec: MlpSpec = field(repr=False)

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


def make_env(config: ExperimentConfig):
    if config.env.name == "cartpole":
        return CartPole(max_steps=config.env.max_episode_steps)
    mdp = load_mdp(config.env.mdp_file, horizon_cap=config.env.max_episode_steps)
    return TabularEnv(mdp)


def make_policy(config: ExperimentConfig, env):
    if env.discrete:
        return CategoricalPolicy(MlpSpec(env.obs_dim, config.policy.hidden_sizes, env.n_actions))
    return GaussianPolicy(MlpSpec(env.obs_dim, config.policy.hidden_sizes, env.action_dim),
                          init_log_std=config.policy.init_log_std)


def collect_batch(env, policy, params, config: ExperimentConfig, rng: np.random.Generator):
    """Roll out the current policy until the batch budget is met.

    Cart-pole batches of whole trajectories run vectorized; otherwise each
    episode gets its own seed drawn up front, so the result does not depend
    on how many worker threads run them.
    """
    run = config.run
    max_steps = config.env.max_episode_steps
    if isinstance(env, CartPole) and run.trajectories_per_batch > 0:
        return env.rollout_batch(policy, params, run.trajectories_per_batch, max_steps, rng)

    def one(seed):
        local = CartPole(env.max_steps) if isinstance(env, CartPole) else TabularEnv(env.mdp)
        return rollout(local, policy, params, max_steps, seed)

    trajs = []
    steps = 0
    while True:
        if run.trajectories_per_batch > 0:
            n = run.trajectories_per_batch
        else:
            n = TIMESTEP_CHUNK
        seeds = [int(s) for s in rng.integers(0, 2 ** 63 - 1, size=n)]
        if run.workers > 1:
            with ThreadPoolExecutor(run.workers) as pool:
                new = list(pool.map(one, seeds))
        else:
            new = [one(s) for s in seeds]
        trajs.extend(new)
        steps += sum(len(t) for t in new)
        if run.trajectories_per_batch > 0 or steps >= run.batch_timesteps:
            return trajs


def compute_advantages(trajs, value_spec, value_params, config: ExperimentConfig):
    """Advantages (and value targets) for a batch, using the given value params."""
    mode = config.gae.baseline_mode
    gamma = config.gae.gamma
    targets = None
    if mode == "value_function":
        gcfg = config.gae_config()
        processed = []
        for tr in trajs:
            values = forward(value_spec, value_params, tr.states)[:, 0]
            processed.append(A.process_trajectory(tr, values, gcfg, lam_v=config.vf.lam))
        advs = [p.advantages for p in processed]
        targets = [p.value_targets for p in processed]
    elif mode == "time_dependent":
        advs = A.time_dependent_baseline_advantages(trajs, gamma)
    else:
        advs = [A.value_targets(tr.rewards, np.zeros(len(tr) + 1), gamma, 1.0, True) for tr in trajs]
    if config.gae.normalize_advantages:
        advs = A.normalize_advantages(advs)
    return advs, targets


def train(config: ExperimentConfig, initial_params=None, observer=None, cell=(0, 0)) -> TrainResult:
    """Run the batch policy-iteration loop.

    Each iteration: collect rollouts with the current policy, compute
    advantages with the *current* value function, take a TRPO step, then
    fit the value function on the same batch. ``observer(event, **data)``
    is called at each phase for instrumentation. ``cell`` selects an
    independent random stream (used by :func:`sweep`).
    """
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence(config.run.seed, spawn_key=tuple(cell)))
    env = make_env(config)
    policy = make_policy(config, env)
    value_spec = MlpSpec(env.obs_dim, config.vf.hidden_sizes, 1)
    if initial_params is None:
        theta = policy.init_params(rng)
        phi = value_spec.init_params(rng)
    else:
        theta, phi = (np.array(p, dtype=np.float64) for p in initial_params)
    tr_cfg = config.trust_region_config()
    vf_cfg = config.value_fit_config()
    use_vf = config.gae.baseline_mode == "value_function"
    notify = observer or (lambda event, **data: None)
    records = []
    for i in range(config.run.iterations):
        start = time.perf_counter()
        try:
            notify("iteration_start", iteration=i, theta=theta.copy(), phi=phi.copy())
            trajs = collect_batch(env, policy, theta, config, rng)
            notify("advantages", iteration=i, phi=phi.copy())
            advs, targets = compute_advantages(trajs, value_spec, phi, config)
            states = np.concatenate([t.states[:-1] for t in trajs])
            actions = np.concatenate([t.actions for t in trajs])
            batch = PolicyBatch(states, actions, policy.log_prob(theta, states, actions), np.concatenate(advs))
            theta, step = trpo_step(policy, theta, batch, tr_cfg)
            notify("policy_step", iteration=i, theta=theta.copy(), info=step)
            vf_pre = vf_post = float("nan")
            if use_vf:
                all_targets = np.concatenate(targets)
                vf_pre = float(np.mean((forward(value_spec, phi, states)[:, 0] - all_targets) ** 2))
                phi, _ = fit_value_function(value_spec, phi, states, all_targets, vf_cfg)
                vf_post = float(np.mean((forward(value_spec, phi, states)[:, 0] - all_targets) ** 2))
                notify("value_fit", iteration=i, phi=phi.copy())
        except Exception as exc:
            raise TrainingError(i, exc) from exc
        returns = [t.rewards.sum() for t in trajs]
        rec = IterationRecord(
            iter=i,
            mean_cost=-float(np.mean(returns)),
            mean_ep_len=float(np.mean([len(t) for t in trajs])),
            kl=step.kl,
            surrogate_improve=step.surrogate_improvement,
            vf_loss_pre=vf_pre,
            vf_loss_post=vf_post,
            wall_s=time.perf_counter() - start,
        )
        records.append(rec)
        log.debug("iter %d cost %.2f len %.1f kl %.4g", i, rec.mean_cost, rec.mean_ep_len, rec.kl)
    return TrainResult(records, theta, phi, policy, value_spec)


def write_curve(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow(r.row() if isinstance(r, IterationRecord) else r)


def read_curve(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in row] for row in rows[1:]])


def save_policy(path, result: TrainResult) -> None:
    pol = result.policy
    if isinstance(pol, GaussianPolicy):
        save_checkpoint(path, "gaussian", pol.mean_spec, result.policy_params)
    else:
        save_checkpoint(path, "categorical", pol.logits_spec, result.policy_params)


def evaluate(env, policy, params, episodes: int, max_steps: int, seed: int = 0) -> dict:
    """Run the mean (greedy) action for ``episodes`` episodes."""
    rng = np.random.default_rng(seed)
    lengths, returns = [], []
    for _ in range(episodes):
        state = env.reset(rng)
        total, t = 0.0, 0
        done = getattr(env, "done", False)
        while not done and t < max_steps:
            out = env.step(policy.mode(params, state))
            state, total, t = out.next_state, total + out.reward, t + 1
            done = out.terminal or out.truncated
        lengths.append(t)
        returns.append(total)
    return {"episodes": episodes, "mean_ep_len": float(np.mean(lengths)), "mean_cost": -float(np.mean(returns))}


# ---------------------------------------------------------------------------
# Sweeps


@dataclass
class SweepResult:
    gammas: list[float]
    lambdas: list[float]
    seeds: list[int]
    curves: dict  # (gi, li) -> (iterations, n_columns) array averaged over seeds
    summary: np.ndarray  # |gammas| x |lambdas| mean cost after the last iteration
    errors: dict

    def best_cell(self) -> tuple[float, float]:
        gi, li = np.unravel_index(np.nanargmin(self.summary), self.summary.shape)
        return self.gammas[gi], self.lambdas[li]


def _run_cell(args):
    config, gi, li, seed = args
    cfg = copy_config(config)
    cfg.run.seed = seed
    try:
        result = train(cfg, cell=(gi, li))
        return gi, li, seed, np.array([r.row() for r in result.records]), None
    except Exception as exc:  # per-cell failures are recorded, not fatal
        return gi, li, seed, None, repr(exc)


def sweep(base_config: ExperimentConfig, gammas, lambdas, seeds, out_dir=None, workers: int = 1) -> SweepResult:
    """Train every (gamma, lambda, seed) combination and tabulate final cost."""
    gammas, lambdas, seeds = list(gammas), list(lambdas), list(seeds)
    if not (gammas and lambdas and seeds):
        raise ValueError("gammas, lambdas and seeds must be nonempty")
    jobs = []
    for gi, g in enumerate(gammas):
        for li, lam in enumerate(lambdas):
            cfg = copy_config(base_config)
            cfg.gae.gamma, cfg.gae.lam = g, lam
            jobs.extend((cfg, gi, li, s) for s in seeds)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            outputs = list(pool.map(_run_cell, jobs))
    else:
        outputs = [_run_cell(j) for j in jobs]
    per_cell: dict = {}
    errors: dict = {}
    for gi, li, seed, curve, err in outputs:
        if err is not None:
            errors.setdefault((gi, li), []).append((seed, err))
            log.warning("sweep cell gamma=%s lam=%s seed=%s failed: %s", gammas[gi], lambdas[li], seed, err)
        else:
            per_cell.setdefault((gi, li), []).append(curve)
    curves = {k: np.mean(np.stack(v), axis=0) for k, v in per_cell.items()}
    summary = np.full((len(gammas), len(lambdas)), np.nan)
    for (gi, li), curve in curves.items():
        summary[gi, li] = curve[-1, CSV_COLUMNS.index("mean_cost")]
    result = SweepResult(gammas, lambdas, seeds, curves, summary, errors)
    if out_dir:
        write_sweep(result, out_dir)
    return result


def write_sweep(result: SweepResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for (gi, li), curve in result.curves.items():
        write_curve(out / f"curve_gamma{result.gammas[gi]:g}_lam{result.lambdas[li]:g}.csv", curve.tolist())
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gamma \\ lambda", *[f"{lam:g}" for lam in result.lambdas]])
        for gi, g in enumerate(result.gammas):
            w.writerow([f"{g:g}", *[f"{c:.3f}" for c in result.summary[gi]]])


def format_grid(result: SweepResult) -> str:
    head = "gamma\\lam " + "".join(f"{lam:>10g}" for lam in result.lambdas)
    lines = [head]
    for gi, g in enumerate(result.gammas):
        lines.append(f"{g:<10g}" + "".join(f"{c:>10.1f}" for c in result.summary[gi]))
    return "\n".join(lines)
