"""Trust-region regression of a value network onto fixed targets.

Each step minimizes the linearized squared error subject to the averaged
Gaussian-KL constraint ``mean((V_new - V_old)**2) / (2 sigma^2) <= eps``,
with ``sigma^2`` the pre-step mean squared error. The Gauss-Newton matrix
``H = J^T J / N`` is only ever applied through Jacobian-vector products.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import MlpSpec, forward, jacobian_vector_products
from .trpo import CGDivergence, conjugate_gradient


@dataclass(frozen=True)
class ValueFitConfig:
    epsilon_v: float = 0.01
    cg_iters: int = 10
    cg_tol: float = 1e-10
    damping: float = 1e-5
    n_steps: int = 1
    backtrack_ratio: float = 0.5
    max_backtracks: int = 10
    lam_v: float = 1.0

    def __post_init__(self):
        if self.epsilon_v <= 0:
            raise ValueError("epsilon_v must be positive")
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")


@dataclass
class ValueStepInfo:
    accepted: bool
    objective_before: float
    objective_after: float
    constraint: float = 0.0
    sigma_sq: float = 0.0
    cg_residual: float = 0.0
    step_fraction: float = 0.0
    direction: np.ndarray | None = None


def compute_sigma_sq(values_old, targets) -> float:
    """Mean squared error of the current value predictions."""
    values_old = np.asarray(values_old, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if values_old.shape != targets.shape:
        raise ValueError("values and targets must have equal length")
    if values_old.size == 0:
        raise ValueError("need at least one sample")
    return float(np.mean((values_old - targets) ** 2))


def regression_objective(spec: MlpSpec, params, states, targets) -> float:
    return float(np.sum((forward(spec, params, states)[:, 0] - targets) ** 2))


def value_trust_region_step(spec: MlpSpec, params, states, targets, config: ValueFitConfig = ValueFitConfig()):
    """One constrained Gauss-Newton step; returns ``(new_params, ValueStepInfo)``."""
    params = np.asarray(params, dtype=np.float64)
    states = np.atleast_2d(states)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    N = len(targets)
    jvp, vjp = jacobian_vector_products(spec, params, states)
    v_old = forward(spec, params, states)[:, 0]
    resid = v_old - targets
    obj = float(resid @ resid)
    sigma_sq = compute_sigma_sq(v_old, targets)
    if sigma_sq == 0.0:
        return params, ValueStepInfo(False, obj, obj)
    g = vjp(2.0 * resid[:, None])
    if not np.any(g):
        return params, ValueStepInfo(False, obj, obj, sigma_sq=sigma_sq)

    def hvp(v):
        return vjp(jvp(v)) / N + config.damping * v

    cg = conjugate_gradient(hvp, -g, config.cg_iters, config.cg_tol)
    s = cg.x
    shs = s @ hvp(s)
    if not (np.isfinite(shs) and shs > 0):
        raise CGDivergence("value step has no positive curvature")
    alpha = np.sqrt(2.0 * config.epsilon_v * sigma_sq / shs)
    # never go past the minimizer of the Gauss-Newton model along s
    alpha = min(alpha, -(g @ s) / (2.0 * N * shs))
    frac = 1.0
    for _ in range(config.max_backtracks + 1):
        candidate = params + frac * alpha * s
        v_new = forward(spec, candidate, states)[:, 0]
        obj_new = float(np.sum((v_new - targets) ** 2))
        constraint = float(np.mean((v_new - v_old) ** 2) / (2.0 * sigma_sq))
        if obj_new <= obj and constraint <= config.epsilon_v:
            return candidate, ValueStepInfo(True, obj, obj_new, constraint, sigma_sq, cg.residual, frac, s)
        frac *= config.backtrack_ratio
    return params, ValueStepInfo(False, obj, obj, 0.0, sigma_sq, cg.residual, 0.0, s)


def fit_value_function(spec: MlpSpec, params, states, targets, config: ValueFitConfig = ValueFitConfig()):
    """Apply ``config.n_steps`` trust-region steps with the targets held fixed.

    Returns ``(new_params, [ValueStepInfo, ...])``.
    """
    infos = []
    for _ in range(config.n_steps):
        params, info = value_trust_region_step(spec, params, states, targets, config)
        infos.append(info)
    return params, infos
