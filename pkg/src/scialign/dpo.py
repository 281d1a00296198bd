"""Online fine-tuning of the flow generator with a reward-ranked pairwise
objective and subject-based gradient masking.

For each prompt, two stochastic rollouts are generated and scored by the
reward model; the higher-scoring trajectory is the winner.  The loss is a
logistic preference objective on the difference of trajectory log-probability
ratios between the trained policy and a frozen reference, where each step's
ratio only sums per-coordinate Gaussian log-density terms inside a latent
mask derived from the subject bounding box (padded by a fixed fraction in
pixel space, then mapped through the spatially local codec with outward
rounding).

Masking semantics: a mask selects which latent coordinates contribute
log-density terms, applied identically to the trained and reference
policies, so a full mask reproduces the unmasked objective exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import nn
from .checkpoints import MetricsWriter
from .flow import LATENT_H, LATENT_W, VelocityModel, decode_latent, ode_sample
from .sde import ChurnParams, PolicyStep, policy_mean, sde_rollout
from .world import RESOLUTION, detect_box


@dataclass
class FlowTrajectory:
    condition: str
    steps: list[PolicyStep]
    final_latent: np.ndarray
    final_image: np.ndarray
    final_reward: float | None = None

    @property
    def delta_t(self) -> float:
        return 1.0 / len(self.steps)


@dataclass
class TrajectoryPair:
    winner: FlowTrajectory
    loser: FlowTrajectory
    tie: bool = False


@dataclass
class OftConfig:
    beta: float = 10.0
    batch_size: int = 8
    learning_rate: float = 3e-4
    steps: int = 140
    grad_accum: int = 2
    prompts_per_epoch: int = 32
    prompt_pool_size: int = 300
    images_per_prompt: int = 2
    n_sample_steps: int = 8
    churn: ChurnParams = field(default_factory=ChurnParams)
    mask_padding: float = 0.1
    use_mask: bool = True
    step_subsample: int | None = None  # None -> sum over all eligible steps
    eval_every: int = 10
    eval_prompts: int = 16
    eval_images_per_prompt: int = 2
    eval_n_steps: int = 8
    seed: int = 0

    @classmethod
    def paper_faithful(cls) -> "OftConfig":
        return cls(beta=10.0, batch_size=8, learning_rate=3e-4, steps=140,
                   grad_accum=2, prompts_per_epoch=32, prompt_pool_size=300,
                   images_per_prompt=2, churn=ChurnParams(0.1, 0.0, math.inf, 1.0))


def trajectory_from_steps(condition: str, steps: list[PolicyStep]) -> FlowTrajectory:
    final = steps[-1].action
    return FlowTrajectory(condition=condition, steps=steps, final_latent=final,
                          final_image=decode_latent(final))


def pair_from_rollouts(traj_a: FlowTrajectory, traj_b: FlowTrajectory,
                       reward_model) -> TrajectoryPair:
    """Score two finished rollouts and order them into winner/loser."""
    for traj in (traj_a, traj_b):
        if traj.final_reward is None:
            traj.final_reward = reward_model.score(traj.condition, traj.final_image)
    if traj_a.final_reward == traj_b.final_reward:
        return TrajectoryPair(winner=traj_a, loser=traj_b, tie=True)
    if traj_a.final_reward > traj_b.final_reward:
        return TrajectoryPair(winner=traj_a, loser=traj_b)
    return TrajectoryPair(winner=traj_b, loser=traj_a)


def rollout_pair(model: VelocityModel, reward_model, prompt: str, n_steps: int,
                 params: ChurnParams, rng: np.random.Generator) -> TrajectoryPair:
    """Two independent stochastic rollouts under one prompt, reward-ranked.

    Exact reward ties are flagged; callers skip flagged pairs.
    """
    stream_a, stream_b = rng.spawn(2)
    traj_a = trajectory_from_steps(prompt, sde_rollout(model, prompt, n_steps, params, stream_a))
    traj_b = trajectory_from_steps(prompt, sde_rollout(model, prompt, n_steps, params, stream_b))
    return pair_from_rollouts(traj_a, traj_b, reward_model)


# ---------------------------------------------------------------------------
# masks

def pad_box(box, fraction: float, height: int, width: int) -> tuple[float, float, float, float]:
    """Grow a pixel box by ``fraction`` of its width and height (half per
    side), clamped to the image bounds.  Returns fractional coordinates."""
    if fraction < 0:
        raise ValueError("padding fraction must be >= 0")
    x1, y1, x2, y2 = (float(v) for v in box)
    dx = (x2 - x1) * fraction / 2.0
    dy = (y2 - y1) * fraction / 2.0
    return (max(0.0, x1 - dx), max(0.0, y1 - dy),
            min(float(width), x2 + dx), min(float(height), y2 + dy))


def box_to_latent(box, height: int, width: int, latent_height: int,
                  latent_width: int) -> tuple[int, int, int, int]:
    """Map a pixel box to latent-cell coordinates by proportional scaling.

    Lower bounds are floored and upper bounds ceiled so no covered latent
    cell is lost; a box that rounds to zero area is expanded to one cell.
    """
    x1, y1, x2, y2 = (float(v) for v in box)
    if not (0 <= x1 <= x2 <= width and 0 <= y1 <= y2 <= height):
        raise ValueError(f"box {box} exceeds image bounds {width}x{height}")
    lx1 = math.floor(x1 / width * latent_width)
    ly1 = math.floor(y1 / height * latent_height)
    lx2 = math.ceil(x2 / width * latent_width)
    ly2 = math.ceil(y2 / height * latent_height)
    if lx2 <= lx1:
        lx2 = min(lx1 + 1, latent_width)
        lx1 = lx2 - 1
    if ly2 <= ly1:
        ly2 = min(ly1 + 1, latent_height)
        ly1 = ly2 - 1
    return lx1, ly1, lx2, ly2


def latent_mask(latent_box, latent_height: int = LATENT_H,
                latent_width: int = LATENT_W) -> np.ndarray:
    """Boolean [H_l, W_l] grid, True inside the latent box (broadcast over
    channels when applied)."""
    lx1, ly1, lx2, ly2 = latent_box
    mask = np.zeros((latent_height, latent_width), dtype=bool)
    mask[ly1:ly2, lx1:lx2] = True
    if not mask.any():
        raise ValueError("latent mask has no active cell")
    return mask


def full_mask(latent_height: int = LATENT_H, latent_width: int = LATENT_W) -> np.ndarray:
    return np.ones((latent_height, latent_width), dtype=bool)


def mask_for_image(image: np.ndarray, padding: float = 0.1,
                   box: tuple | None = None) -> np.ndarray:
    """Subject mask for one image: detect (or accept) a pixel box, pad it,
    and map it into latent cells.  Falls back to a full mask when no subject
    is detected."""
    if box is None:
        box = detect_box(image)
    if box is None:
        return full_mask()
    padded = pad_box(box, padding, RESOLUTION, RESOLUTION)
    return latent_mask(box_to_latent(padded, RESOLUTION, RESOLUTION, LATENT_H, LATENT_W))


# ---------------------------------------------------------------------------
# masked preference objective

def masked_step_logratio(action: np.ndarray, mean_theta: np.ndarray,
                         mean_ref: np.ndarray, sigma: float, mask: np.ndarray) -> float:
    """Per-step log-density ratio restricted to masked latent cells.

    Sums, over masked coordinates, the scalar Gaussian log-density of the
    recorded action under the trained policy minus the same under the
    reference.  The normalisation constants cancel coordinate-wise, so this
    is computed as a difference of squared residuals.
    """
    if sigma <= 0:
        raise ValueError("degenerate step: masked log-ratio requires sigma > 0")
    m = mask[:, :, None]
    diff = (action - mean_ref) ** 2 - (action - mean_theta) ** 2
    return float(np.sum(diff * m) / (2.0 * sigma * sigma))


def _eligible_steps(traj: FlowTrajectory, t_min: float | None,
                    subsample: int | None, rng: np.random.Generator | None):
    dt = traj.delta_t
    lo = dt - 1e-12 if t_min is None else t_min - 1e-12
    steps = [s for s in traj.steps if not s.degenerate and s.t >= lo]
    if subsample is not None and rng is not None and len(steps) > subsample:
        idx = sorted(rng.choice(len(steps), size=subsample, replace=False))
        steps = [steps[i] for i in idx]
    return steps


def _trajectory_logratio(theta: VelocityModel, ref: VelocityModel,
                         traj: FlowTrajectory, mask: np.ndarray,
                         t_min: float | None = None,
                         subsample: int | None = None,
                         rng: np.random.Generator | None = None,
                         grad_ctx: list | None = None) -> float:
    """Masked log pi_theta/pi_ref summed over a trajectory's eligible steps."""
    steps = _eligible_steps(traj, t_min, subsample, rng)
    if not steps:
        return 0.0
    states = np.stack([s.state for s in steps])
    ts = np.array([s.t for s in steps])
    dt = traj.delta_t
    prompts = [traj.condition] * len(steps)
    v_theta, cache = theta.forward(states, ts, prompts, with_cache=True)
    v_ref = ref.forward(states, ts, prompts)
    total = 0.0
    dmeans = np.zeros_like(v_theta) if grad_ctx is not None else None
    for i, s in enumerate(steps):
        mean_theta = policy_mean(v_theta[i], s.state, s.t, dt, s.sigma)
        mean_ref = policy_mean(v_ref[i], s.state, s.t, dt, s.sigma)
        total += masked_step_logratio(s.action, mean_theta, mean_ref, s.sigma, mask)
        if grad_ctx is not None:
            one_minus = 1.0 - s.t
            coef_v = (s.t * s.sigma ** 2 + 2.0 * one_minus) / (-2.0 * one_minus)
            # d logratio / d mean_theta = (action - mean_theta) / sigma^2 on
            # masked coordinates; chain through the linear mean map
            dmean = (s.action - mean_theta) / (s.sigma ** 2) * mask[:, :, None]
            dmeans[i] = dmean * coef_v * dt
    if grad_ctx is not None:
        grad_ctx.append((dmeans, cache))
    return total


def dpo_loss(pair: TrajectoryPair, theta: VelocityModel, ref: VelocityModel,
             beta: float, mask_w: np.ndarray, mask_l: np.ndarray,
             t_min: float | None = None, subsample: int | None = None,
             rng: np.random.Generator | None = None,
             grads: dict[str, np.ndarray] | None = None) -> float:
    """Masked trajectory-level preference loss for one winner/loser pair.

    -log sigmoid(beta * (masked log-ratio of winner - masked log-ratio of
    loser)).  When ``grads`` is given, parameter gradients of the trained
    policy are accumulated into it.
    """
    if beta <= 0:
        raise ValueError("beta must be > 0")
    if pair.tie:
        raise ValueError("tied pairs carry no preference signal; skip them")
    ctx_w: list | None = [] if grads is not None else None
    ctx_l: list | None = [] if grads is not None else None
    lr_w = _trajectory_logratio(theta, ref, pair.winner, mask_w, t_min, subsample, rng, ctx_w)
    lr_l = _trajectory_logratio(theta, ref, pair.loser, mask_l, t_min, subsample, rng, ctx_l)
    margin = beta * (lr_w - lr_l)
    loss = float(np.logaddexp(0.0, -margin))
    nn.check_finite(loss, "dpo_loss")
    if grads is not None:
        dmargin = -float(expit(-margin))
        for ctx, sign in ((ctx_w, 1.0), (ctx_l, -1.0)):
            for dmeans, cache in ctx:
                theta.backward(dmargin * beta * sign * dmeans, cache, grads)
    return loss


# ---------------------------------------------------------------------------
# training loop

def evaluate_mean_reward(model: VelocityModel, reward_model, prompts: list[str],
                         images_per_prompt: int, n_steps: int, seed: int) -> float:
    """Fig-style evaluation protocol: generate a few images per prompt with
    the deterministic sampler and average the reward-model score."""
    scores = []
    for i, prompt in enumerate(prompts):
        for j in range(images_per_prompt):
            image = ode_sample(model, prompt, n_steps, seed=(seed * 100003 + i * 131 + j))
            scores.append(reward_model.score(prompt, image))
    return float(np.mean(scores))


def oft_train(sft_model: VelocityModel, reward_model, prompt_pool: list[str],
              config: OftConfig, box_fn=None,
              metrics_path: str | Path | None = None
              ) -> tuple[VelocityModel, MetricsWriter]:
    """Online fine-tuning loop.

    The reference policy is a frozen copy of the supplied checkpoint.  Per
    epoch, ``prompts_per_epoch`` prompts are sampled from the pool and rolled
    out into reward-ranked pairs (ties skipped); optimizer steps consume
    ``batch_size`` pairs across ``grad_accum`` micro-batches.  Subject boxes
    come from ``box_fn(image, prompt) -> box|None`` (ground-truth detector by
    default) and are padded and mapped into per-image latent masks.
    """
    if config.images_per_prompt != 2:
        raise ValueError("pair construction needs exactly two images per prompt")
    theta = sft_model.copy()
    ref = sft_model.copy()
    pool = list(prompt_pool)[: config.prompt_pool_size]
    if not pool:
        raise ValueError("empty prompt pool")
    if box_fn is None:
        box_fn = lambda image, prompt: detect_box(image)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x0F7]))
    opt = nn.AdamW(theta.params, lr=config.learning_rate, no_decay=tuple(theta.params))
    metrics = MetricsWriter(metrics_path)
    eval_prompts = [pool[i] for i in
                    rng.choice(len(pool), size=min(config.eval_prompts, len(pool)),
                               replace=False)]

    def run_eval(step):
        return evaluate_mean_reward(theta, reward_model, eval_prompts,
                                    config.eval_images_per_prompt,
                                    config.eval_n_steps, seed=config.seed + 7919)

    buffer: list[TrajectoryPair] = []
    ties = 0

    def refill():
        nonlocal ties
        idx = rng.choice(len(pool), size=min(config.prompts_per_epoch, len(pool)),
                         replace=False)
        for i in idx:
            pair = rollout_pair(theta, reward_model, pool[i], config.n_sample_steps,
                                config.churn, rng)
            if pair.tie:
                ties += 1
            else:
                buffer.append(pair)

    baseline = run_eval(0)
    metrics.write({"step": 0, "eval_reward": round(baseline, 10)})
    for step in range(1, config.steps + 1):
        grads = theta.zero_grads()
        losses = []
        per_micro = max(1, config.batch_size // config.grad_accum)
        for _ in range(config.grad_accum):
            taken = 0
            attempts = 0
            while taken < per_micro and attempts < 4:
                if not buffer:
                    refill()
                    attempts += 1
                    continue
                pair = buffer.pop()
                mask_w = (mask_for_image(pair.winner.final_image, config.mask_padding,
                                         box_fn(pair.winner.final_image, pair.winner.condition))
                          if config.use_mask else full_mask())
                mask_l = (mask_for_image(pair.loser.final_image, config.mask_padding,
                                         box_fn(pair.loser.final_image, pair.loser.condition))
                          if config.use_mask else full_mask())
                losses.append(dpo_loss(pair, theta, ref, config.beta, mask_w, mask_l,
                                       subsample=config.step_subsample, rng=rng,
                                       grads=grads))
                taken += 1
        if not losses:
            warnings.warn(f"oft step {step}: every sampled pair tied; step skipped")
            metrics.write({"step": step, "loss": None, "skipped": True, "ties": ties})
            continue
        for key in grads:
            grads[key] /= len(losses)
        opt.step(grads)
        theta.step += 1
        row = {"step": step, "loss": round(float(np.mean(losses)), 10), "ties": ties,
               "pairs": len(losses)}
        if config.eval_every and (step % config.eval_every == 0 or step == config.steps):
            row["eval_reward"] = round(run_eval(step), 10)
        metrics.write(row)
    return theta, metrics
