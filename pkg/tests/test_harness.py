import numpy as np
import pytest

from conftest import angle
from gaepg.advantage import value_targets
from gaepg.config import (
    ExperimentConfig, config_keys, copy_config, format_config, get_key, load_config,
    parse_config, set_key, with_overrides,
)
from gaepg.envs import format_mdp
from gaepg.harness import (
    CSV_COLUMNS, TrainingError, collect_batch, compute_advantages, make_env, make_policy,
    read_curve, sweep, train, write_curve,
)
from gaepg.oracle import (
    action_probs, exact_fisher_matrix, exact_policy_gradient, random_episodic_mdp, solve_values,
)


@pytest.fixture
def mdp_file(tmp_path):
    mdp = random_episodic_mdp(np.random.default_rng(0), 4, 3)
    path = tmp_path / "mdp.txt"
    path.write_text(format_mdp(mdp), encoding="utf-8")
    return path, mdp


def tabular_config(path, **kw):
    cfg = ExperimentConfig()
    cfg.env.name, cfg.env.mdp_file, cfg.env.max_episode_steps = "tabular", str(path), 10
    cfg.run.trajectories_per_batch, cfg.run.batch_timesteps = 0, 200
    cfg.run.iterations = 3
    cfg.vf.hidden_sizes = ()
    for k, v in kw.items():
        set_key(cfg, k.replace("__", "."), str(v))
    return cfg


def small_cartpole(**kw):
    cfg = ExperimentConfig()
    cfg.run.iterations, cfg.run.trajectories_per_batch = 2, 5
    cfg.env.max_episode_steps = 100
    for k, v in kw.items():
        set_key(cfg, k.replace("__", "."), str(v))
    return cfg


# -- configuration ------------------------------------------------------------

def test_defaults_match_cartpole_setup():
    cfg = ExperimentConfig()
    cfg.validate()
    assert cfg.policy.hidden_sizes == () and cfg.vf.hidden_sizes == (20,)
    assert cfg.run.trajectories_per_batch == 20 and cfg.env.max_episode_steps == 1000
    assert (cfg.gae.gamma, cfg.gae.lam) == (0.99, 0.96)


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig()
    set_key(cfg, "vf.hidden_sizes", "8, 4")
    set_key(cfg, "gae.normalize_advantages", "false")
    set_key(cfg, "trpo.epsilon", "0.02")
    path = tmp_path / "c.cfg"
    path.write_text("# comment\n" + format_config(cfg), encoding="utf-8")
    again = load_config(path)
    for key in config_keys():
        assert get_key(again, key) == get_key(cfg, key)


def test_config_errors():
    with pytest.raises(KeyError):
        parse_config("trpo.nope = 1")
    with pytest.raises(KeyError):
        parse_config("nope.epsilon = 1")
    with pytest.raises(ValueError):
        parse_config("trpo.epsilon 1")
    with pytest.raises(ValueError):
        parse_config("gae.normalize_advantages = maybe")
    for over in (dict(run__iterations=0), dict(run__batch_timesteps=100), dict(gae__baseline_mode="x"),
                 dict(env__name="tabular"), dict(gae__lam=1.5), dict(trpo__epsilon=0.0)):
        with pytest.raises(ValueError):
            with_overrides(ExperimentConfig(), **over).validate()


def test_copy_is_independent():
    a = ExperimentConfig()
    b = copy_config(a)
    b.trpo.epsilon = 0.5
    assert a.trpo.epsilon == 0.01


# -- training loop --------------------------------------------------------------

def test_fixed_seed_is_reproducible():
    a, b = train(small_cartpole()), train(small_cartpole())
    for ra, rb in zip(a, b):
        assert [getattr(ra, c) for c in CSV_COLUMNS if c != "wall_s"] == \
               [getattr(rb, c) for c in CSV_COLUMNS if c != "wall_s"]
    assert np.array_equal(a.policy_params, b.policy_params)
    c = train(small_cartpole(run__seed=1))
    assert not np.array_equal(a.policy_params, c.policy_params)


def test_records_are_finite():
    res = train(small_cartpole())
    assert len(res) == 2
    for rec in res:
        assert np.all(np.isfinite([getattr(rec, c) for c in CSV_COLUMNS]))


def test_policy_update_precedes_value_update():
    events = []

    def observer(event, **data):
        events.append((event, data))

    train(small_cartpole(run__iterations=3), observer=observer)
    names = [e for e, _ in events]
    assert names == ["iteration_start", "advantages", "policy_step", "value_fit"] * 3
    fitted = None
    for event, data in events:
        if event == "advantages":
            # advantages always use the value function from the previous iteration
            if fitted is not None:
                assert np.array_equal(data["phi"], fitted)
        if event == "value_fit":
            assert fitted is None or not np.array_equal(data["phi"], fitted)
            fitted = data["phi"]


def test_time_dependent_mode(mdp_file):
    path, _ = mdp_file
    cfg = tabular_config(path, gae__baseline_mode="time_dependent", gae__normalize_advantages="false")
    env = make_env(cfg)
    policy = make_policy(cfg, env)
    theta = policy.init_params(np.random.default_rng(0))
    trajs = collect_batch(env, policy, theta, cfg, np.random.default_rng(1))
    advs, targets = compute_advantages(trajs, None, None, cfg)
    assert targets is None
    rets = [value_targets(t.rewards, np.zeros(len(t) + 1), cfg.gae.gamma) for t in trajs]
    for t in range(max(len(r) for r in rets)):
        alive = [r[t] for r in rets if len(r) > t]
        for r, a in zip(rets, advs):
            if len(r) > t:
                assert a[t] == pytest.approx(r[t] - np.mean(alive), abs=1e-12)
    res = train(cfg)
    assert np.isnan(res.records[0].vf_loss_pre)


def test_timestep_budget_is_worker_independent(mdp_file):
    path, _ = mdp_file
    one = train(tabular_config(path))
    two = train(tabular_config(path, run__workers=3))
    assert np.array_equal(one.policy_params, two.policy_params)
    assert all(r.mean_ep_len > 0 for r in one)


def test_timestep_budget_is_met(mdp_file):
    path, _ = mdp_file
    cfg = tabular_config(path)
    env = make_env(cfg)
    policy = make_policy(cfg, env)
    trajs = collect_batch(env, policy, np.zeros(policy.n_params), cfg, np.random.default_rng(0))
    assert sum(len(t) for t in trajs) >= 200


def test_errors_carry_iteration(mdp_file, monkeypatch):
    import gaepg.harness as h

    def boom(*a, **k):
        raise FloatingPointError("bad step")

    monkeypatch.setattr(h, "trpo_step", boom)
    with pytest.raises(TrainingError) as info:
        train(tabular_config(mdp_file[0]))
    assert info.value.iteration == 0


def test_first_step_follows_natural_gradient(mdp_file):
    path, mdp = mdp_file
    gamma = 0.9
    cfg = tabular_config(path, gae__gamma=gamma, gae__lam=1.0, gae__normalize_advantages="false",
                         run__iterations=1, run__batch_timesteps=10 ** 5, trpo__cg_iters=50)
    env = make_env(cfg)
    policy = make_policy(cfg, env)
    theta = np.random.default_rng(3).normal(scale=0.5, size=policy.n_params)
    v = solve_values(mdp, action_probs(policy, theta, mdp), gamma).v
    phi = np.append(v, 0.0)  # linear value on one-hot features: weights then bias
    steps = []
    train(cfg, initial_params=(theta, phi),
          observer=lambda e, **d: steps.append(d["info"]) if e == "policy_step" else None)
    F = exact_fisher_matrix(mdp, policy, theta, mdp.n_states)
    g = exact_policy_gradient(mdp, policy, theta, gamma, mdp.n_states)
    natural = np.linalg.pinv(F, rcond=1e-10) @ g
    assert np.degrees(angle(steps[0].direction, natural)) < 15.0


# -- curves and sweeps ----------------------------------------------------------

def test_curve_round_trip(tmp_path):
    res = train(small_cartpole())
    write_curve(tmp_path / "c.csv", res.records)
    arr = read_curve(tmp_path / "c.csv")
    assert arr.shape == (2, len(CSV_COLUMNS))
    np.testing.assert_allclose(arr[:, 1], [r.mean_cost for r in res])


def test_degenerate_sweep_equals_train():
    cfg = small_cartpole()
    res = sweep(cfg, [cfg.gae.gamma], [cfg.gae.lam], [cfg.run.seed])
    single = train(cfg)
    curve = res.curves[(0, 0)]
    expect = np.array([r.row() for r in single.records])
    cols = [i for i, c in enumerate(CSV_COLUMNS) if c != "wall_s"]
    np.testing.assert_array_equal(curve[:, cols], expect[:, cols])
    assert res.summary.shape == (1, 1) and res.summary[0, 0] == single.records[-1].mean_cost


def test_sweep_grid_and_files(tmp_path):
    res = sweep(small_cartpole(run__iterations=1), [0.9, 0.99], [0.0, 0.5, 1.0], [0, 1], out_dir=tmp_path)
    assert res.summary.shape == (2, 3) and not res.errors
    assert res.best_cell()[0] in (0.9, 0.99)
    assert (tmp_path / "summary.csv").exists()
    assert len(list(tmp_path.glob("curve_*.csv"))) == 6


def test_sweep_records_failures(tmp_path):
    cfg = small_cartpole()
    cfg.env.name, cfg.env.mdp_file = "tabular", str(tmp_path / "missing.txt")
    res = sweep(cfg, [0.9], [0.5], [0, 1])
    assert np.isnan(res.summary[0, 0]) and len(res.errors[(0, 0)]) == 2


def test_sweep_cells_use_distinct_streams():
    cfg = small_cartpole(run__iterations=1)
    res = sweep(cfg, [0.99, 0.99], [0.96], [0])
    a, b = res.curves[(0, 0)], res.curves[(1, 0)]
    assert not np.array_equal(a[:, 1:3], b[:, 1:3])


def test_sweep_rejects_empty_lists():
    with pytest.raises(ValueError):
        sweep(small_cartpole(), [], [0.5], [0])
