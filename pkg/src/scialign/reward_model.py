"""Toy dual-encoder reward model.

A text encoder (token + position embeddings, mean-pooled, two dense layers)
and an image encoder (two 3x3 convolutions with average pooling, then a
two-layer perceptron) map prompts and rasters into a shared unit sphere.
The score of (prompt, image) is the cosine similarity scaled by a single
learnable temperature, stored as log T so positivity never needs a
constraint.

Training minimises the combined preference loss over tuple batches with both
encoders learnable, using AdamW with a warmup-cosine schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn, preference
from .checkpoints import MetricsWriter, config_hash, load_checkpoint, save_checkpoint
from .world import DatasetManifest, SciTuple


class VocabularyError(KeyError):
    pass


@dataclass(frozen=True)
class DualEncoderConfig:
    vocab: tuple[str, ...]
    embed_dim: int = 32
    token_dim: int = 24
    text_hidden: int = 48
    conv_channels: tuple[int, int] = (8, 16)
    image_hidden: int = 64
    max_prompt_len: int = 8
    temperature_init: float = 10.0
    seed: int = 0

    def to_meta(self) -> dict:
        return {
            "kind": "reward_model",
            "vocab": list(self.vocab),
            "embed_dim": self.embed_dim,
            "token_dim": self.token_dim,
            "text_hidden": self.text_hidden,
            "conv_channels": list(self.conv_channels),
            "image_hidden": self.image_hidden,
            "max_prompt_len": self.max_prompt_len,
            "temperature_init": self.temperature_init,
            "seed": self.seed,
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "DualEncoderConfig":
        return cls(
            vocab=tuple(meta["vocab"]),
            embed_dim=meta["embed_dim"],
            token_dim=meta["token_dim"],
            text_hidden=meta["text_hidden"],
            conv_channels=tuple(meta["conv_channels"]),
            image_hidden=meta["image_hidden"],
            max_prompt_len=meta["max_prompt_len"],
            temperature_init=meta["temperature_init"],
            seed=meta["seed"],
        )


@dataclass
class EvalReport:
    overall: float
    per_task: dict[str, float]
    per_domain: dict[str, float]
    task_counts: dict[str, int]
    domain_counts: dict[str, int]
    split: str
    n_tuples: int

    def to_dict(self) -> dict:
        return {
            "overall": self.overall,
            "per_task": self.per_task,
            "per_domain": self.per_domain,
            "task_counts": self.task_counts,
            "domain_counts": self.domain_counts,
            "split": self.split,
            "n_tuples": self.n_tuples,
        }


class RewardModel:
    def __init__(self, config: DualEncoderConfig, params: dict[str, np.ndarray] | None = None):
        self.config = config
        self.token_to_id = {tok: i for i, tok in enumerate(config.vocab)}
        self.params = params if params is not None else self._init_params()
        self.step = 0

    def _init_params(self) -> dict[str, np.ndarray]:
        cfg = self.config
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xC0DE]))
        c1, c2 = cfg.conv_channels
        flat = (32 // 4) * (32 // 4) * c2
        p = {
            "tok_emb": rng.normal(0, 0.5, size=(len(cfg.vocab), cfg.token_dim)),
            # multiplicative position gates; additive ones would cancel under
            # the mean pooling and leave the encoder order-insensitive
            "pos_emb": 1.0 + 0.3 * rng.normal(0, 1.0, size=(cfg.max_prompt_len, cfg.token_dim)),
            "txt_w1": nn.he_init(rng, (cfg.token_dim, cfg.text_hidden), cfg.token_dim),
            "txt_b1": np.zeros(cfg.text_hidden),
            "txt_w2": nn.he_init(rng, (cfg.text_hidden, cfg.embed_dim), cfg.text_hidden),
            "txt_b2": np.zeros(cfg.embed_dim),
            "img_k1": nn.he_init(rng, (3, 3, 3, c1), 27),
            "img_c1b": np.zeros(c1),
            "img_k2": nn.he_init(rng, (3, 3, c1, c2), 9 * c1),
            "img_c2b": np.zeros(c2),
            "img_w1": nn.he_init(rng, (flat, cfg.image_hidden), flat),
            "img_b1": np.zeros(cfg.image_hidden),
            "img_w2": nn.he_init(rng, (cfg.image_hidden, cfg.embed_dim), cfg.image_hidden),
            "img_b2": np.zeros(cfg.embed_dim),
            "log_temp": np.array([np.log(cfg.temperature_init)]),
        }
        return p

    @property
    def temperature(self) -> float:
        return float(np.exp(self.params["log_temp"][0]))

    def tokenize(self, prompt: str | tuple[str, ...]) -> list[int]:
        tokens = prompt.split() if isinstance(prompt, str) else list(prompt)
        ids = []
        for tok in tokens[: self.config.max_prompt_len]:
            if tok not in self.token_to_id:
                raise VocabularyError(f"token {tok!r} is not in the model vocabulary")
            ids.append(self.token_to_id[tok])
        if not ids:
            raise VocabularyError("empty prompt")
        return ids

    # -- text pathway -------------------------------------------------------
    def _text_forward(self, prompt):
        p = self.params
        ids = self.tokenize(prompt)
        emb = p["tok_emb"][ids] * p["pos_emb"][: len(ids)]
        pooled = emb.mean(axis=0)
        h_pre, c1 = nn.dense_forward(pooled[None, :], p["txt_w1"], p["txt_b1"])
        h, c2 = nn.tanh_forward(h_pre)
        z, c3 = nn.dense_forward(h, p["txt_w2"], p["txt_b2"])
        u, c4 = nn.normalize_forward(z)
        return u[0], (ids, c1, c2, c3, c4)

    def _text_backward(self, du, cache, grads):
        ids, c1, c2, c3, c4 = cache
        dz = nn.normalize_backward(du[None, :], c4)
        dh, dw2, db2 = nn.dense_backward(dz, c3)
        dh_pre = nn.tanh_backward(dh, c2)
        dpooled, dw1, db1 = nn.dense_backward(dh_pre, c1)
        grads["txt_w2"] += dw2
        grads["txt_b2"] += db2
        grads["txt_w1"] += dw1
        grads["txt_b1"] += db1
        demb = np.repeat(dpooled, len(ids), axis=0) / len(ids)
        np.add.at(grads["tok_emb"], ids, demb * self.params["pos_emb"][: len(ids)])
        grads["pos_emb"][: len(ids)] += demb * self.params["tok_emb"][ids]

    def encode_text(self, prompt) -> np.ndarray:
        u, _ = self._text_forward(prompt)
        return u

    # -- image pathway ------------------------------------------------------
    def _image_forward(self, images: np.ndarray):
        p = self.params
        x = np.asarray(images, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        x = x / 255.0 - 0.5
        a, ca = nn.conv3x3_forward(x, p["img_k1"], p["img_c1b"])
        r1, cr1 = nn.relu_forward(a)
        p1, cp1 = nn.avgpool2_forward(r1)
        b, cb = nn.conv3x3_forward(p1, p["img_k2"], p["img_c2b"])
        r2, cr2 = nn.relu_forward(b)
        p2, cp2 = nn.avgpool2_forward(r2)
        flat = p2.reshape(p2.shape[0], -1)
        h_pre, c1 = nn.dense_forward(flat, p["img_w1"], p["img_b1"])
        h, c2 = nn.tanh_forward(h_pre)
        z, c3 = nn.dense_forward(h, p["img_w2"], p["img_b2"])
        u, c4 = nn.normalize_forward(z)
        return u, (ca, cr1, cp1, cb, cr2, cp2, p2.shape, c1, c2, c3, c4)

    def _image_backward(self, du, cache, grads):
        ca, cr1, cp1, cb, cr2, cp2, p2_shape, c1, c2, c3, c4 = cache
        dz = nn.normalize_backward(du, c4)
        dh, dw2, db2 = nn.dense_backward(dz, c3)
        dh_pre = nn.tanh_backward(dh, c2)
        dflat, dw1, db1 = nn.dense_backward(dh_pre, c1)
        dp2 = dflat.reshape(p2_shape)
        dr2 = nn.avgpool2_backward(dp2, cp2)
        db_conv = nn.relu_backward(dr2, cr2)
        dp1, dk2, dc2b = nn.conv3x3_backward(db_conv, cb)
        dr1 = nn.avgpool2_backward(dp1, cp1)
        da = nn.relu_backward(dr1, cr1)
        _, dk1, dc1b = nn.conv3x3_backward(da, ca)
        grads["img_w2"] += dw2
        grads["img_b2"] += db2
        grads["img_w1"] += dw1
        grads["img_b1"] += db1
        grads["img_k2"] += dk2
        grads["img_c2b"] += dc2b
        grads["img_k1"] += dk1
        grads["img_c1b"] += dc1b

    def encode_image(self, image: np.ndarray) -> np.ndarray:
        u, _ = self._image_forward(image)
        return u[0] if np.asarray(image).ndim == 3 else u

    # -- scoring ------------------------------------------------------------
    def score(self, prompt, image: np.ndarray) -> float:
        return preference.reward(self.encode_text(prompt), self.encode_image(image), self.temperature)

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    # -- persistence --------------------------------------------------------
    def save(self, path: str | Path) -> Path:
        meta = self.config.to_meta()
        meta["step"] = self.step
        meta["config_hash"] = config_hash(self.config.to_meta())
        return save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path: str | Path) -> "RewardModel":
        params, meta = load_checkpoint(path)
        model = cls(DualEncoderConfig.from_meta(meta), params)
        model.step = meta.get("step", 0)
        return model


@dataclass
class RewardHyper:
    batch_size: int = 32
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    steps: int = 300
    warmup_steps: int = 30
    lambda_weight: float = 0.25
    schedule: str = "cosine"
    seed: int = 0

    @classmethod
    def paper_faithful(cls) -> "RewardHyper":
        return cls(batch_size=128, learning_rate=2e-6, weight_decay=0.3,
                   steps=600, warmup_steps=150, lambda_weight=0.25,
                   schedule="cosine", seed=0)


def tuple_loss_and_grads(model: RewardModel, tup: SciTuple, lambda_weight: float):
    """Loss terms and parameter gradients for one tuple (used by tests)."""
    grads = model.zero_grads()
    terms = _batch_pass(model, [tup], lambda_weight, grads)
    return terms, grads


def _batch_pass(model: RewardModel, batch: list[SciTuple], lambda_weight: float,
                grads: dict[str, np.ndarray] | None):
    """Mean loss over a batch; accumulates parameter gradients when asked."""
    images = np.stack([im for t in batch for im in (t.explicit_image, t.superficial_image)])
    img_emb, img_cache = model._image_forward(images)
    text_runs = []
    for t in batch:
        for prompt in (t.implicit_prompt, t.explicit_prompt, t.superficial_prompt):
            text_runs.append(model._text_forward(prompt))
    temp = model.temperature
    n = len(batch)
    d_img = np.zeros_like(img_emb)
    totals = np.zeros(3)
    d_temp = 0.0
    for i, t in enumerate(batch):
        x_i, x_e, x_s = (text_runs[3 * i + j][0] for j in range(3))
        y_e, y_s = img_emb[2 * i], img_emb[2 * i + 1]
        terms, g = preference.total_loss_with_grads(x_i, x_e, x_s, y_e, y_s, temp, lambda_weight)
        totals += np.array([terms.ipa, terms.iee_pos, terms.iee_neg])
        if grads is not None:
            for j, key in enumerate(("x_i", "x_e", "x_s")):
                model._text_backward(g[key] / n, text_runs[3 * i + j][1], grads)
            d_img[2 * i] = g["y_e"] / n
            d_img[2 * i + 1] = g["y_s"] / n
            d_temp += g["temperature"] / n
    if grads is not None:
        model._image_backward(d_img, img_cache, grads)
        grads["log_temp"] += d_temp * temp  # d loss / d log T = T * d loss / dT
    ipa, pos, neg = totals / n
    return preference.LossTerms(ipa=ipa, iee_pos=pos, iee_neg=neg,
                                lambda_weight=lambda_weight,
                                total=ipa + lambda_weight * (pos + neg))


def train_reward_model(manifest: DatasetManifest, config: DualEncoderConfig,
                       hyper: RewardHyper, metrics_path: str | Path | None = None
                       ) -> tuple[RewardModel, MetricsWriter]:
    train = manifest.split("train")
    model = RewardModel(config)
    opt = nn.AdamW(model.params, lr=hyper.learning_rate, weight_decay=hyper.weight_decay,
                   no_decay=("log_temp", "txt_b1", "txt_b2", "img_b1", "img_b2",
                             "img_c1b", "img_c2b"))
    rng = np.random.default_rng(np.random.SeedSequence([hyper.seed, 0x7EA1]))
    metrics = MetricsWriter(metrics_path)
    for step in range(hyper.steps):
        idx = rng.choice(len(train), size=min(hyper.batch_size, len(train)), replace=False)
        batch = [train[i] for i in idx]
        grads = model.zero_grads()
        terms = _batch_pass(model, batch, hyper.lambda_weight, grads)
        nn.check_finite(terms.total, f"reward training step {step}")
        if hyper.schedule == "cosine":
            lr = nn.warmup_cosine_lr(step, hyper.steps, hyper.warmup_steps, hyper.learning_rate)
        else:
            lr = hyper.learning_rate
        opt.step(grads, lr=lr)
        model.step = step + 1
        metrics.write({
            "step": step,
            "loss": round(terms.total, 10),
            "ipa": round(terms.ipa, 10),
            "iee_pos": round(terms.iee_pos, 10),
            "iee_neg": round(terms.iee_neg, 10),
            "lr": lr,
        })
    return model, metrics


def two_choice_select(model: RewardModel, implicit_prompt, image_a: np.ndarray,
                      image_b: np.ndarray) -> str:
    """Pick the image scoring higher against the prompt; ties go to A."""
    r_a = model.score(implicit_prompt, image_a)
    r_b = model.score(implicit_prompt, image_b)
    return "A" if r_a >= r_b else "B"


def evaluate_accuracy(model: RewardModel, manifest: DatasetManifest, split: str) -> EvalReport:
    tuples = manifest.split(split)
    task_hits: dict[str, list[int]] = {}
    domain_hits: dict[str, list[int]] = {}
    for t in tuples:
        hit = int(two_choice_select(model, t.implicit_prompt, t.explicit_image,
                                    t.superficial_image) == "A")
        task_hits.setdefault(t.task_id, []).append(hit)
        domain_hits.setdefault(t.domain, []).append(hit)
    per_task = {k: 100.0 * float(np.mean(v)) for k, v in sorted(task_hits.items())}
    per_domain = {k: 100.0 * float(np.mean(v)) for k, v in sorted(domain_hits.items())}
    overall = 100.0 * float(np.mean([h for v in task_hits.values() for h in v]))
    return EvalReport(
        overall=overall,
        per_task=per_task,
        per_domain=per_domain,
        task_counts={k: len(v) for k, v in sorted(task_hits.items())},
        domain_counts={k: len(v) for k, v in sorted(domain_hits.items())},
        split=split,
        n_tuples=len(tuples),
    )
