"""Trust-region policy step: CG natural-gradient direction plus KL line search."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .policy import mean_kl


@dataclass(frozen=True)
class TrustRegionConfig:
    epsilon: float = 0.01
    cg_iters: int = 10
    cg_tol: float = 1e-10
    damping: float = 1e-5
    backtrack_ratio: float = 0.8
    max_backtracks: int = 10

    def __post_init__(self):
        if self.epsilon <= 0 or self.cg_tol <= 0:
            raise ValueError("epsilon and cg_tol must be positive")
        if not 0 < self.backtrack_ratio < 1:
            raise ValueError("backtrack_ratio must lie in (0, 1)")


class CGDivergence(FloatingPointError):
    pass


@dataclass
class CGResult:
    x: np.ndarray
    residual: float
    iterations: int


def conjugate_gradient(apply_A, b, iters: int = 10, tol: float = 1e-10) -> CGResult:
    """Solve ``A x = b`` for symmetric PSD ``A`` given only ``x -> A x``.

    Stops once ``||b - A x|| / ||b|| <= tol``. The reported residual is the
    recursively updated one.
    """
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return CGResult(x, 0.0, 0)
    r = b.copy()
    p = b.copy()
    rr = r @ r
    it = 0
    for it in range(1, iters + 1):
        Ap = apply_A(p)
        pAp = p @ Ap
        if not np.isfinite(pAp):
            raise CGDivergence("non-finite curvature in conjugate gradient")
        if pAp <= 0:
            break
        alpha = rr / pAp
        x = x + alpha * p
        r = r - alpha * Ap
        rr_new = r @ r
        if np.sqrt(rr_new) / bnorm <= tol:
            rr = rr_new
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    if not np.all(np.isfinite(x)):
        raise CGDivergence("conjugate gradient produced non-finite values")
    return CGResult(x, float(np.sqrt(rr) / bnorm), it)


@dataclass
class PolicyBatch:
    """Flattened samples for one policy update."""

    states: np.ndarray
    actions: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray

    def __len__(self):
        return len(self.advantages)


def surrogate_loss(policy, params, batch: PolicyBatch) -> float:
    """``mean(pi_new(a|s) / pi_old(a|s) * A)``; larger is better."""
    ratio = np.exp(policy.log_prob(params, batch.states, batch.actions) - batch.old_log_probs)
    return float(np.mean(ratio * batch.advantages))


def surrogate_grad(policy, params, batch: PolicyBatch) -> np.ndarray:
    ratio = np.exp(policy.log_prob(params, batch.states, batch.actions) - batch.old_log_probs)
    return policy.weighted_score(params, batch.states, batch.actions, ratio * batch.advantages) / len(batch)


@dataclass
class StepInfo:
    accepted: bool
    kl: float = 0.0
    surrogate_improvement: float = 0.0
    cg_residual: float = 0.0
    step_fraction: float = 0.0
    full_step_kl: float = 0.0
    direction: np.ndarray | None = field(default=None, repr=False)


def trpo_step(policy, params, batch: PolicyBatch, config: TrustRegionConfig = TrustRegionConfig()):
    """One trust-region policy update; returns ``(new_params, StepInfo)``.

    The full step ``alpha * s`` with ``s ~ F^-1 g`` is sized so that the
    quadratic KL model equals ``epsilon``; it is then shrunk by
    ``backtrack_ratio`` until the surrogate improves and the exact mean KL
    is within ``epsilon``. If nothing is accepted, ``params`` is returned.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    params = np.asarray(params, dtype=np.float64)
    g = surrogate_grad(policy, params, batch)
    if not np.any(g):
        return params, StepInfo(accepted=False)

    def fvp(v):
        return policy.fisher_vector_product(params, batch.states, v, config.damping)

    cg = conjugate_gradient(fvp, g, config.cg_iters, config.cg_tol)
    s = cg.x
    shs = s @ fvp(s)
    if not shs > 0:
        return params, StepInfo(accepted=False, cg_residual=cg.residual)
    alpha = np.sqrt(2.0 * config.epsilon / shs)
    full = alpha * s
    base = surrogate_loss(policy, params, batch)
    full_kl = mean_kl(policy, params, params + full, batch.states)
    frac = 1.0
    for _ in range(config.max_backtracks + 1):
        candidate = params + frac * full
        kl = mean_kl(policy, params, candidate, batch.states)
        improvement = surrogate_loss(policy, candidate, batch) - base
        if improvement > 0 and kl <= config.epsilon:
            return candidate, StepInfo(True, kl, improvement, cg.residual, frac, full_kl, s)
        frac *= config.backtrack_ratio
    return params, StepInfo(False, 0.0, 0.0, cg.residual, 0.0, full_kl, s)
