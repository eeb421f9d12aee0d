"""Oracle certification suite behind the ``verify`` command.

Every check here is exact: expectations come from trajectory enumeration on
tiny random MDPs, so a pass means agreement to round-off, not to sampling
error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .envs import TabularMDP
from .oracle import (
    EstimatorKind, action_probs, certify_gamma_just, exact_estimator_moments,
    random_episodic_mdp, response_function, shape_mdp,
    solve_values, tabular_policy,
)

GAMMA_JUST = (
    EstimatorKind("discounted_return"),
    EstimatorKind("q_value"),
    EstimatorKind("advantage"),
    EstimatorKind("td_residual"),
    EstimatorKind("gae", lam=1.0),
)
LAMBDA_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass
class SuiteInstance:
    mdp: TabularMDP
    policy: object
    params: np.ndarray
    gamma: float
    wrong_v: np.ndarray

    @property
    def true_v(self) -> np.ndarray:
        return solve_values(self.mdp, action_probs(self.policy, self.params, self.mdp), self.gamma).v


def random_suite(seed: int = 0, n: int = 20) -> list[SuiteInstance]:
    """``n`` random forward-only MDPs (2 to 4 states, 1 to 3 actions) with random policies."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        mdp = random_episodic_mdp(rng, int(rng.integers(2, 5)), int(rng.integers(1, 4)))
        policy = tabular_policy(mdp)
        params = rng.normal(size=policy.n_params)
        gamma = 1.0 if i % 4 == 0 else float(rng.uniform(0.5, 1.0))
        wrong_v = rng.normal(scale=2.0, size=mdp.n_states)
        out.append(SuiteInstance(mdp, policy, params, gamma, wrong_v))
    return out


def biased_value_mdp() -> TabularMDP:
    """Two-step MDP where the first action changes how often state 1 is reached.

    From state 0, action 0 reaches state 1 with probability 0.9 and action 1
    with probability 0.2; otherwise the episode ends. State 1 pays 1 on its
    way to the terminal state 2.
    """
    P = np.zeros((3, 2, 3))
    P[0, 0] = [0.0, 0.9, 0.1]
    P[0, 1] = [0.0, 0.2, 0.8]
    P[1, :, 2] = 1.0
    P[2, :, 2] = 1.0
    R = np.zeros((3, 2, 3))
    R[1, :, 2] = 1.0
    return TabularMDP(P, R, [1.0, 0.0, 0.0], (2,), horizon_cap=3)


@dataclass
class Row:
    label: str
    gap: float
    tol: float
    expect_certified: bool = True

    @property
    def passed(self) -> bool:
        return self.gap <= self.tol if self.expect_certified else self.gap > self.tol


@dataclass
class Report:
    rows: list[Row] = field(default_factory=list)
    variance: list[tuple[str, float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)


_V_NOTE = {"td_residual": " (true V)", "gae": " (arbitrary V)"}


def _value_for(kind: EstimatorKind, inst: SuiteInstance) -> np.ndarray | None:
    if kind.tag == "td_residual":
        return inst.true_v
    if kind.tag == "gae":
        return inst.wrong_v
    return None


def gamma_just_rows(suite, tol: float) -> list[Row]:
    """Largest certification gap over the suite for each estimator that should be unbiased."""
    rows = []
    for kind in GAMMA_JUST:
        gap = max(
            certify_gamma_just(inst.mdp, inst.policy, inst.params, kind, _value_for(kind, inst), inst.gamma,
                               tol).gap
            for inst in suite
        )
        rows.append(Row(str(kind) + _V_NOTE.get(kind.tag, ""), gap, tol))
    return rows


def baseline_rows(suite, tol: float, seed: int = 1) -> list[Row]:
    """A random history-dependent baseline added to gamma-just estimators keeps the gap at zero."""
    rng = np.random.default_rng(seed)
    table: dict = {}

    def baseline(states, actions):
        key = (states, actions)
        if key not in table:
            table[key] = float(rng.normal(scale=3.0))
        return table[key]

    gap = 0.0
    for inst in suite:
        for kind in (EstimatorKind("discounted_return"), EstimatorKind("q_value")):
            table.clear()
            c = certify_gamma_just(inst.mdp, inst.policy, inst.params, kind, None, inst.gamma, tol,
                                   baseline=baseline)
            gap = max(gap, c.gap)
    return [Row("gamma-just + random baseline", gap, tol)]


def bias_profile(gamma: float = 0.99, perturbation: float = 0.5, lambdas=LAMBDA_GRID, seed: int = 0):
    """Certification gap of GAE(gamma, lam) on :func:`biased_value_mdp` with V off at state 1."""
    mdp = biased_value_mdp()
    policy = tabular_policy(mdp)
    params = np.random.default_rng(seed).normal(scale=0.5, size=policy.n_params)
    v = solve_values(mdp, action_probs(policy, params, mdp), gamma).v.copy()
    v[1] += perturbation
    gaps = [certify_gamma_just(mdp, policy, params, EstimatorKind("gae", lam=lam), v, gamma).gap for lam in lambdas]
    return np.array(lambdas), np.array(gaps)


def bias_rows(tol: float) -> list[Row]:
    lams, gaps = bias_profile()
    rows = [
        Row("td_residual, V off by 0.5", float(gaps[0]), 1e-3, expect_certified=False),
        Row("gae(lam=1), V off by 0.5", float(gaps[-1]), tol),
    ]
    return rows


def shaping_rows(suite, tol: float = 1e-12, seed: int = 2) -> list[Row]:
    """Shaping leaves advantages unchanged; shaping by V zeroes values and delayed response."""
    rng = np.random.default_rng(seed)
    adv_gap = zero_gap = chi_gap = 0.0
    for inst in suite:
        mdp, pi = inst.mdp, action_probs(inst.policy, inst.params, inst.mdp)
        sol = solve_values(mdp, pi, inst.gamma)
        phi = rng.normal(size=mdp.n_states)
        shaped = solve_values(shape_mdp(mdp, phi, inst.gamma), pi, inst.gamma)
        adv_gap = max(adv_gap, float(np.max(np.abs(shaped.adv - sol.adv))))
        by_v = shape_mdp(mdp, sol.v, inst.gamma)
        zero_gap = max(zero_gap, float(np.max(np.abs(solve_values(by_v, pi, inst.gamma).v))))
        for s in np.flatnonzero(mdp.nonterminal):
            for a in range(mdp.n_actions):
                chi = response_function(by_v, pi, s, a, mdp.n_states)
                chi_gap = max(chi_gap, float(np.max(np.abs(chi[1:]))))
    return [
        Row("shaping keeps advantages", adv_gap, tol),
        Row("shaping by V zeroes values", zero_gap, tol),
        Row("shaping by V zeroes delayed response", chi_gap, tol),
    ]


VARIANCE_KINDS = (
    EstimatorKind("total_reward"),
    EstimatorKind("reward_to_go"),
    EstimatorKind("baselined_reward_to_go"),
    EstimatorKind("q_value"),
    EstimatorKind("advantage"),
    EstimatorKind("td_residual"),
)


def variance_diagnostics(inst: SuiteInstance) -> list[tuple[str, float]]:
    """Exact total variance of the gradient estimate per estimator, no pass bar."""
    out = []
    for kind in VARIANCE_KINDS:
        v = inst.true_v if kind.tag in ("baselined_reward_to_go", "td_residual") else None
        m = exact_estimator_moments(inst.mdp, inst.policy, inst.params, kind, v, 1.0 if kind.tag in (
            "total_reward", "reward_to_go", "baselined_reward_to_go") else inst.gamma, inst.mdp.n_states)
        out.append((str(kind), m.variance))
    return out


def run_suite(tol: float = 1e-9, seed: int = 0, n: int = 20) -> Report:
    suite = random_suite(seed, n)
    report = Report()
    report.rows += gamma_just_rows(suite, tol)
    report.rows += baseline_rows(suite, tol)
    report.rows += bias_rows(tol)
    report.rows += shaping_rows(suite)
    undiscounted = next(inst for inst in suite if inst.gamma == 1.0 and inst.mdp.n_actions > 1)
    report.variance = variance_diagnostics(undiscounted)
    return report


def format_report(report: Report) -> str:
    width = max(len(r.label) for r in report.rows)
    lines = [f"{'check':<{width}}  {'gap':>10}  {'bound':>12}  result"]
    for r in report.rows:
        bound = f"<= {r.tol:.0e}" if r.expect_certified else f"> {r.tol:.0e}"
        lines.append(f"{r.label:<{width}}  {r.gap:>10.3e}  {bound:>12}  {'PASS' if r.passed else 'FAIL'}")
    if report.variance:
        lines.append("")
        lines.append("exact gradient-estimate variance (gamma = 1 instance)")
        for label, var in report.variance:
            lines.append(f"  {label:<{width}}  {var:>10.4g}")
    return "\n".join(lines)
