"""Rectified-flow generator at toy scale.

Time convention used throughout the package: a single scalar time t in
[0, 1] with pure noise at t=0 and data at t=1, so the interpolation path is
x_t = t * data + (1 - t) * eps.  The velocity network is trained to predict
the NOISE-pointing tangent eps - data, and the sampler therefore takes Euler
steps x <- x - v * dt from t=0 to t=1.  (Equivalently: the network learns the
velocity of the reversed-time flow whose state starts at the data; this is
the convention large rectified-flow systems use, and it is what makes the
stochastic policy mean formula in ``sde`` exact.)  The README carries the
full mapping table between the two time parameterisations.

The pixel<->latent codec is a lossless space-to-depth rearrangement with a
fixed affine intensity map, standing in for a spatially local autoencoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .checkpoints import MetricsWriter, config_hash, load_checkpoint, save_checkpoint
from .world import CHANNELS, RESOLUTION, DatasetManifest

LATENT_FACTOR = 4
LATENT_H = RESOLUTION // LATENT_FACTOR
LATENT_W = RESOLUTION // LATENT_FACTOR
LATENT_C = CHANNELS * LATENT_FACTOR * LATENT_FACTOR
LATENT_SHAPE = (LATENT_H, LATENT_W, LATENT_C)


def encode_latent(image: np.ndarray) -> np.ndarray:
    """Space-to-depth rearrangement with intensities mapped to [-1, 1]."""
    img = np.asarray(image)
    h, w, c = img.shape
    if h % LATENT_FACTOR or w % LATENT_FACTOR:
        raise ValueError(f"image size {h}x{w} is not divisible by {LATENT_FACTOR}")
    x = img.astype(np.float64) / 255.0 * 2.0 - 1.0
    f = LATENT_FACTOR
    return (x.reshape(h // f, f, w // f, f, c)
             .transpose(0, 2, 1, 3, 4)
             .reshape(h // f, w // f, f * f * c))


def decode_latent(latent: np.ndarray) -> np.ndarray:
    """Inverse rearrangement; values are clipped and rounded to uint8."""
    z = np.asarray(latent, dtype=np.float64)
    hl, wl, cl = z.shape
    f = LATENT_FACTOR
    c = cl // (f * f)
    x = (z.reshape(hl, wl, f, f, c)
          .transpose(0, 2, 1, 3, 4)
          .reshape(hl * f, wl * f, c))
    return np.clip(np.rint((x + 1.0) / 2.0 * 255.0), 0, 255).astype(np.uint8)


def forward_sample(x_data: np.ndarray, eps: np.ndarray, t: float) -> np.ndarray:
    """Point on the straight data-noise path at time t (data at t=1)."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    x_data = np.asarray(x_data, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x_data.shape != eps.shape:
        raise ValueError(f"shape mismatch: {x_data.shape} vs {eps.shape}")
    return t * x_data + (1.0 - t) * eps


def velocity_target(x_data: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """Regression target for the velocity network: the noise-pointing
    tangent eps - data, constant along the straight path."""
    x_data = np.asarray(x_data, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x_data.shape != eps.shape:
        raise ValueError(f"shape mismatch: {x_data.shape} vs {eps.shape}")
    return eps - x_data


@dataclass(frozen=True)
class VelocityModelConfig:
    vocab: tuple[str, ...]
    hidden_channels: tuple[int, int] = (96, 96)
    cond_dim: int = 16
    time_dim: int = 16
    gain_floor: float = 1.0 / 64.0
    seed: int = 0

    def to_meta(self) -> dict:
        return {
            "kind": "velocity_model",
            "vocab": list(self.vocab),
            "hidden_channels": list(self.hidden_channels),
            "cond_dim": self.cond_dim,
            "time_dim": self.time_dim,
            "gain_floor": self.gain_floor,
            "seed": self.seed,
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "VelocityModelConfig":
        return cls(
            vocab=tuple(meta["vocab"]),
            hidden_channels=tuple(meta["hidden_channels"]),
            cond_dim=meta["cond_dim"],
            time_dim=meta["time_dim"],
            gain_floor=meta.get("gain_floor", 1.0 / 64.0),
            seed=meta["seed"],
        )


def time_features(t: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal embedding of scalar times, shape [B, dim]."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = 2.0 ** np.arange(half)
    ang = 2.0 * math.pi * t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class VelocityModel:
    """Small convolutional velocity field with time and prompt conditioning.

    The raw convolutional output is scaled by 1 / max(1 - t, gain_floor)
    before being returned as the velocity.  Along the interpolation path the
    unscaled optimum is then the bounded data residual x_t - E[data | x_t],
    so the network never has to realise the diverging input gain the raw
    field would need near the data end; the floor only matters for
    t > 1 - gain_floor, closer to the data than any sampler step ever
    queries at desk scale.
    """

    def __init__(self, config: VelocityModelConfig, params: dict[str, np.ndarray] | None = None):
        self.config = config
        self.token_to_id = {tok: i for i, tok in enumerate(config.vocab)}
        self.params = params if params is not None else self._init_params()
        self.step = 0

    def _init_params(self) -> dict[str, np.ndarray]:
        cfg = self.config
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xF10A]))
        h1, h2 = cfg.hidden_channels
        # +2 for normalized row/column coordinates; the field must know where
        # a cell sits in the frame to place and denoise positional content
        c_in = LATENT_C + cfg.time_dim + cfg.cond_dim + 2
        return {
            "cond_emb": rng.normal(0, 0.5, size=(len(cfg.vocab), cfg.cond_dim)),
            "k1": nn.he_init(rng, (3, 3, c_in, h1), 9 * c_in),
            "b1": np.zeros(h1),
            "k2": nn.he_init(rng, (3, 3, h1, h2), 9 * h1),
            "b2": np.zeros(h2),
            "k3": rng.normal(0, 0.02, size=(3, 3, h2, LATENT_C)),
            "b3": np.zeros(LATENT_C),
            # linear shortcut from the latent to the raw output; the on-path
            # optimum is close to an affine map of the state, which the relu
            # tower alone is slow to realise
            "w_skip": np.eye(LATENT_C),
            # direct condition-to-field head: the condition-dependent part of
            # the raw target is the prompt's mean data residual, linear in
            # the condition embedding
            "w_cond": np.zeros((cfg.cond_dim, LATENT_H * LATENT_W * LATENT_C)),
        }

    def tokenize(self, prompt: str) -> list[int]:
        ids = []
        for tok in prompt.split():
            if tok not in self.token_to_id:
                raise KeyError(f"token {tok!r} is not in the model vocabulary")
            ids.append(self.token_to_id[tok])
        if not ids:
            raise KeyError("empty prompt")
        return ids

    def _cond_vector(self, prompt) -> tuple[np.ndarray, list[int]]:
        ids = self.tokenize(prompt)
        return self.params["cond_emb"][ids].mean(axis=0), ids

    def forward(self, z: np.ndarray, t, prompts, with_cache: bool = False):
        """Predict velocities for a batch of latents.

        z: [B, H_l, W_l, C_l]; t: scalar or [B]; prompts: one prompt or a
        list of B prompts.
        """
        p = self.params
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 3
        if single:
            z = z[None]
        b = z.shape[0]
        t_arr = np.full(b, float(t)) if np.ndim(t) == 0 else np.asarray(t, dtype=np.float64)
        if isinstance(prompts, str):
            prompts = [prompts]
        prompts = list(prompts)
        if len(prompts) == 1 and b > 1:
            prompts = prompts * b
        if len(prompts) != b:
            raise ValueError(f"got {len(prompts)} prompts for a batch of {b}")
        cond_ids = []
        cond = np.zeros((b, self.config.cond_dim))
        for i, prompt in enumerate(prompts):
            vec, ids = self._cond_vector(prompt)
            cond[i] = vec
            cond_ids.append(ids)
        tfeat = time_features(t_arr, self.config.time_dim)
        hl, wl = z.shape[1], z.shape[2]
        rows = np.broadcast_to(np.linspace(-1.0, 1.0, hl)[None, :, None, None], (b, hl, wl, 1))
        cols = np.broadcast_to(np.linspace(-1.0, 1.0, wl)[None, None, :, None], (b, hl, wl, 1))
        grid = np.concatenate([
            z,
            np.broadcast_to(tfeat[:, None, None, :], (b, hl, wl, tfeat.shape[1])),
            np.broadcast_to(cond[:, None, None, :], (b, hl, wl, cond.shape[1])),
            rows,
            cols,
        ], axis=3)
        a1, c1 = nn.conv3x3_forward(grid, p["k1"], p["b1"])
        r1, cr1 = nn.relu_forward(a1)
        a2, c2 = nn.conv3x3_forward(r1, p["k2"], p["b2"])
        r2, cr2 = nn.relu_forward(a2)
        tower, c3 = nn.conv3x3_forward(r2, p["k3"], p["b3"])
        cond_field = (cond @ p["w_cond"]).reshape(b, hl, wl, LATENT_C)
        raw = tower + z @ p["w_skip"] + cond_field
        gain = 1.0 / np.maximum(1.0 - t_arr, self.config.gain_floor)
        v = raw * gain[:, None, None, None]
        if not with_cache:
            return v[0] if single else v
        return v, (c1, cr1, c2, cr2, c3, cond_ids, gain, z, cond, b, hl, wl)

    def backward(self, dv: np.ndarray, cache, grads: dict[str, np.ndarray]) -> None:
        c1, cr1, c2, cr2, c3, cond_ids, gain, z, cond, b, hl, wl = cache
        draw = dv * gain[:, None, None, None]
        grads["w_skip"] += np.einsum("bijc,bijo->co", z, draw, optimize=True)
        draw_flat = draw.reshape(b, -1)
        grads["w_cond"] += cond.T @ draw_flat
        dcond_direct = draw_flat @ self.params["w_cond"].T
        dr2, dk3, db3 = nn.conv3x3_backward(draw, c3)
        da2 = nn.relu_backward(dr2, cr2)
        dr1, dk2, db2 = nn.conv3x3_backward(da2, c2)
        da1 = nn.relu_backward(dr1, cr1)
        dgrid, dk1, db1 = nn.conv3x3_backward(da1, c1)
        grads["k3"] += dk3
        grads["b3"] += db3
        grads["k2"] += dk2
        grads["b2"] += db2
        grads["k1"] += dk1
        grads["b1"] += db1
        lo = LATENT_C + self.config.time_dim
        dcond = dgrid[..., lo:lo + self.config.cond_dim].sum(axis=(1, 2)) + dcond_direct
        for i, ids in enumerate(cond_ids):
            np.add.at(grads["cond_emb"], ids, dcond[i][None, :] / len(ids))

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def copy(self) -> "VelocityModel":
        clone = VelocityModel(self.config, {k: v.copy() for k, v in self.params.items()})
        clone.step = self.step
        return clone

    def save(self, path: str | Path) -> Path:
        meta = self.config.to_meta()
        meta["step"] = self.step
        meta["config_hash"] = config_hash(self.config.to_meta())
        return save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path: str | Path) -> "VelocityModel":
        params, meta = load_checkpoint(path)
        model = cls(VelocityModelConfig.from_meta(meta), params)
        model.step = meta.get("step", 0)
        return model


def sample_sft_draws(rng: np.random.Generator, batch_size: int):
    """Random (t, eps) draws for one SFT batch, exposed so tests can freeze
    them and treat the loss as a deterministic function of the parameters."""
    t = rng.uniform(0.0, 1.0, size=batch_size)
    eps = rng.standard_normal((batch_size, *LATENT_SHAPE))
    return t, eps


def sft_loss_from_draws(model: VelocityModel, latents: np.ndarray, prompts,
                        t: np.ndarray, eps: np.ndarray,
                        grads: dict[str, np.ndarray] | None = None) -> float:
    """Mean squared velocity-matching error for fixed (t, eps) draws."""
    latents = np.asarray(latents, dtype=np.float64)
    x_t = t[:, None, None, None] * latents + (1.0 - t[:, None, None, None]) * eps
    target = eps - latents
    pred, cache = model.forward(x_t, t, prompts, with_cache=True)
    resid = pred - target
    loss = float(np.mean(resid * resid))
    if grads is not None:
        model.backward(2.0 * resid / resid.size, cache, grads)
    return loss


def sft_loss(model: VelocityModel, batch: list[tuple[np.ndarray, str]],
             rng: np.random.Generator) -> float:
    """Flow-matching loss on a batch of (data latent, prompt) pairs."""
    if not batch:
        raise ValueError("sft_loss needs a non-empty batch")
    latents = np.stack([item[0] for item in batch])
    prompts = [item[1] for item in batch]
    t, eps = sample_sft_draws(rng, len(batch))
    loss = sft_loss_from_draws(model, latents, prompts, t, eps)
    return nn.check_finite(loss, "sft_loss")


def ode_trajectory(model: VelocityModel, condition, n_steps: int, seed: int) -> list[np.ndarray]:
    """Deterministic Euler integration from noise (t=0) to data (t=1).

    Returns the full state sequence [x(0), x(dt), ..., x(1)].
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    rng = np.random.Generator(np.random.Philox(key=seed))
    x = rng.standard_normal(LATENT_SHAPE)
    states = [x]
    dt = 1.0 / n_steps
    for k in range(n_steps):
        t = k * dt
        v = model.forward(x, t, [condition])
        x = x - v * dt
        states.append(x)
    return states


def ode_sample(model: VelocityModel, condition, n_steps: int, seed: int) -> np.ndarray:
    """Generate one image by integrating the learned flow."""
    return decode_latent(ode_trajectory(model, condition, n_steps, seed)[-1])


@dataclass
class SftHyper:
    batch_size: int = 32
    learning_rate: float = 1e-3
    steps: int = 400
    grad_accum: int = 1
    weight_decay: float = 0.0
    warmup_steps: int = 20
    seed: int = 0
    data_mode: str = "implicit"  # implicit: implicit prompt -> explicit image
                                 # descriptive: rendering pretraining mix

    @classmethod
    def paper_faithful(cls) -> "SftHyper":
        return cls(batch_size=32, learning_rate=2e-5, steps=900, grad_accum=8,
                   weight_decay=0.0, warmup_steps=0, seed=0)


def _sft_items(manifest: DatasetManifest, mode: str) -> list[tuple[np.ndarray, str]]:
    items = []
    for t in manifest.split("train"):
        if mode == "implicit":
            items.append((encode_latent(t.explicit_image), t.implicit_prompt))
        elif mode == "descriptive":
            # rendering pretraining: descriptive prompts plus the bare-subject
            # prompt mapped to the task's default prototype rendering
            items.append((encode_latent(t.explicit_image), t.explicit_prompt))
            items.append((encode_latent(t.superficial_image), t.superficial_prompt))
            items.append((encode_latent(t.superficial_image), f"a {t.subject}"))
        else:
            raise ValueError(f"unknown sft data mode {mode!r}")
    return items


def train_sft(manifest: DatasetManifest, config: VelocityModelConfig, hyper: SftHyper,
              init_from: VelocityModel | None = None,
              metrics_path: str | Path | None = None) -> tuple[VelocityModel, MetricsWriter]:
    items = _sft_items(manifest, hyper.data_mode)
    model = init_from.copy() if init_from is not None else VelocityModel(config)
    opt = nn.AdamW(model.params, lr=hyper.learning_rate, weight_decay=hyper.weight_decay,
                   no_decay=("b1", "b2", "b3", "cond_emb"))
    rng = np.random.default_rng(np.random.SeedSequence([hyper.seed, 0x5F7]))
    metrics = MetricsWriter(metrics_path)
    for step in range(hyper.steps):
        grads = model.zero_grads()
        loss_acc = 0.0
        for _ in range(hyper.grad_accum):
            idx = rng.choice(len(items), size=min(hyper.batch_size, len(items)), replace=False)
            latents = np.stack([items[i][0] for i in idx])
            prompts = [items[i][1] for i in idx]
            t, eps = sample_sft_draws(rng, len(idx))
            loss_acc += sft_loss_from_draws(model, latents, prompts, t, eps, grads)
        loss = loss_acc / hyper.grad_accum
        nn.check_finite(loss, f"sft step {step}")
        if hyper.grad_accum > 1:
            for key in grads:
                grads[key] /= hyper.grad_accum
        lr = nn.warmup_cosine_lr(step, hyper.steps, hyper.warmup_steps, hyper.learning_rate)
        opt.step(grads, lr=lr)
        model.step += 1
        metrics.write({"step": step, "loss": round(loss, 10), "lr": lr})
    return model, metrics
