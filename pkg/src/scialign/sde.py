"""Stochastic reinterpretation of the rectified flow sampler.

Each denoising step becomes a Gaussian policy: churn parameters define a
per-step noise scale sigma_t, the step mean is an exact function of the
predicted velocity and the current state, and actions carry computable
log-probabilities, which is what trajectory-level preference optimisation
needs.  Setting the churn strength to zero recovers the deterministic Euler
sampler exactly.

The noise scale vanishes at t=1 (the data end), so the final step is always
deterministic; degenerate steps are flagged and excluded from any density
ratio downstream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .flow import LATENT_SHAPE

GAMMA_CAP = math.sqrt(2.0) - 1.0


@dataclass(frozen=True)
class ChurnParams:
    s_churn: float = 0.1
    s_min: float = 0.0
    s_max: float = math.inf
    s_noise: float = 1.0

    def __post_init__(self):
        if self.s_churn < 0:
            raise ValueError("s_churn must be >= 0")
        if self.s_min > self.s_max:
            raise ValueError("s_min must be <= s_max")
        if self.s_noise <= 0:
            raise ValueError("s_noise must be > 0")


@dataclass
class PolicyStep:
    t: float
    state: np.ndarray
    action: np.ndarray
    mean: np.ndarray
    sigma: float
    log_prob: float | None
    degenerate: bool


def gamma_of(t: float, delta_t: float, params: ChurnParams) -> float:
    """Churn amount for one step, clipped at sqrt(2)-1 and gated to the
    [s_min, s_max] time window."""
    if delta_t <= 0:
        raise ValueError("delta_t must be > 0")
    if params.s_min <= t <= params.s_max:
        return min(params.s_churn * delta_t, GAMMA_CAP)
    return 0.0


def sigma_of(t: float, delta_t: float, params: ChurnParams) -> float:
    """Per-step policy noise scale; zero whenever gamma is zero and always
    zero at t=1."""
    g = gamma_of(t, delta_t, params)
    return params.s_noise * math.sqrt(g * g + 2.0 * g) * (1.0 - t)


def policy_mean(v_pred: np.ndarray, x_state: np.ndarray, t: float, delta_t: float,
                sigma: float) -> np.ndarray:
    """Mean of the Gaussian one-step policy.

    At sigma=0 this reduces exactly to the deterministic Euler update
    x - v * delta_t; the correction term rescales both the velocity and the
    state so the extra churn noise keeps the step consistent with the flow's
    marginals.
    """
    if t >= 1.0:
        raise ValueError("policy_mean is undefined at t=1 (no further action)")
    one_minus = 1.0 - t
    s2 = sigma * sigma
    coef_v = (t * s2 + 2.0 * one_minus) / (-2.0 * one_minus)
    coef_x = (2.0 * one_minus + s2 * delta_t) / (2.0 * one_minus)
    return coef_v * np.asarray(v_pred, dtype=np.float64) * delta_t \
        + coef_x * np.asarray(x_state, dtype=np.float64)


def policy_logprob(action: np.ndarray, mean: np.ndarray, sigma: float,
                   n_dims: int | None = None) -> float:
    """Sum of per-coordinate Gaussian log-densities of an action."""
    if sigma <= 0:
        raise ValueError("degenerate policy: log-probability requires sigma > 0")
    action = np.asarray(action, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    n = action.size if n_dims is None else n_dims
    sq = float(np.sum((action - mean) ** 2))
    return -0.5 * n * math.log(2.0 * math.pi * sigma * sigma) - sq / (2.0 * sigma * sigma)


def sde_step(model, state: np.ndarray, t: float, delta_t: float, condition,
             params: ChurnParams, rng: np.random.Generator) -> PolicyStep:
    """One stochastic policy step: sample an action around the policy mean.

    No randomness is consumed when sigma is zero, so a zero-churn rollout
    matches the deterministic sampler draw-for-draw.
    """
    if t + delta_t > 1.0 + 1e-12:
        raise ValueError("step would overshoot t=1")
    v = model.forward(state, t, [condition])
    sigma = sigma_of(t, delta_t, params)
    mean = policy_mean(v, state, t, delta_t, sigma)
    if sigma > 0.0:
        action = mean + sigma * rng.standard_normal(mean.shape)
        log_prob = policy_logprob(action, mean, sigma)
        degenerate = False
    else:
        action = mean.copy()
        log_prob = None
        degenerate = True
    return PolicyStep(t=t, state=np.asarray(state, dtype=np.float64), action=action,
                      mean=mean, sigma=sigma, log_prob=log_prob, degenerate=degenerate)


def sde_rollout(model, condition, n_steps: int, params: ChurnParams,
                rng: np.random.Generator | int) -> list[PolicyStep]:
    """Full trajectory of policy steps covering t = 0, dt, ..., 1 - dt."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.Generator(np.random.Philox(key=int(rng)))
    x = rng.standard_normal(LATENT_SHAPE)
    dt = 1.0 / n_steps
    steps = []
    for k in range(n_steps):
        step = sde_step(model, x, k * dt, dt, condition, params, rng)
        steps.append(step)
        x = step.action
    return steps
