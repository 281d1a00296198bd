"""Reward and preference losses for the dual-encoder reward model.

All functions are pure and operate on plain numpy vectors.  The reward is a
temperature-scaled cosine similarity; pairwise preferences are two-class
softmaxes over rewards; the training losses are KL divergences against
one-hot targets, which reduce to cross-entropies.

The combined objective couples an implicit-prompt alignment term (pull the
implicit prompt toward the explicit image and away from the superficial one)
with two image-side terms (on the explicit image prefer the explicit prompt,
on the superficial image prefer the superficial prompt), weighted by
``lambda_weight``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

PROB_EPS = 1e-12  # probabilities are clamped to [eps, 1-eps] before any log


@dataclass(frozen=True)
class LossTerms:
    ipa: float
    iee_pos: float
    iee_neg: float
    lambda_weight: float
    total: float


def reward(text_embedding: np.ndarray, image_embedding: np.ndarray, temperature: float) -> float:
    """Temperature-scaled cosine similarity between a prompt and an image."""
    u = np.asarray(text_embedding, dtype=np.float64)
    v = np.asarray(image_embedding, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("reward is undefined for zero-norm embeddings")
    return float(temperature) * float(u @ v) / (nu * nv)


def preference(reward_a: float, reward_b: float) -> float:
    """Probability of preferring item a over item b under a two-class softmax.

    Computed as a logistic of the reward difference, which is the
    numerically stable form of exp(r_a) / (exp(r_a) + exp(r_b)).
    """
    return float(expit(float(reward_a) - float(reward_b)))


def bt_probability(reward_w: float, reward_l: float) -> float:
    """Bradley-Terry win probability; identical to ``preference`` by design."""
    return preference(reward_w, reward_l)


def kl_to_onehot(target_index: int, predicted) -> float:
    """KL divergence from a one-hot target to a two-class prediction.

    With a one-hot target (and the 0*log 0 = 0 convention) this is exactly
    the cross-entropy -log predicted[target_index].
    """
    if target_index not in (0, 1):
        raise ValueError(f"target_index must be 0 or 1, got {target_index}")
    p = np.clip(np.asarray(predicted, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    if p.shape != (2,):
        raise ValueError("predicted must hold exactly two probabilities")
    return float(-np.log(p[target_index]))


def _neg_log_pref(reward_diff: float) -> float:
    # -log(sigmoid(d)) = log(1 + exp(-d)), stable for any finite d
    return float(np.logaddexp(0.0, -float(reward_diff)))


def ipa_loss(x_i_emb, y_e_emb, y_s_emb, temperature: float) -> float:
    """Implicit-prompt alignment: prefer the explicit image given the
    implicit prompt."""
    r_e = reward(x_i_emb, y_e_emb, temperature)
    r_s = reward(x_i_emb, y_s_emb, temperature)
    return _neg_log_pref(r_e - r_s)


def iee_loss(x_e_emb, x_s_emb, y_e_emb, y_s_emb, temperature: float) -> tuple[float, float]:
    """Image-side losses: the explicit image prefers the explicit prompt,
    the superficial image prefers the superficial prompt."""
    pos = _neg_log_pref(
        reward(x_e_emb, y_e_emb, temperature) - reward(x_s_emb, y_e_emb, temperature)
    )
    neg = _neg_log_pref(
        reward(x_s_emb, y_s_emb, temperature) - reward(x_e_emb, y_s_emb, temperature)
    )
    return pos, neg


def total_loss(x_i_emb, x_e_emb, x_s_emb, y_e_emb, y_s_emb,
               temperature: float, lambda_weight: float) -> LossTerms:
    """Combined objective: alignment term plus lambda-weighted image terms."""
    if lambda_weight < 0:
        raise ValueError(f"lambda_weight must be >= 0, got {lambda_weight}")
    ipa = ipa_loss(x_i_emb, y_e_emb, y_s_emb, temperature)
    pos, neg = iee_loss(x_e_emb, x_s_emb, y_e_emb, y_s_emb, temperature)
    return LossTerms(
        ipa=ipa,
        iee_pos=pos,
        iee_neg=neg,
        lambda_weight=float(lambda_weight),
        total=ipa + lambda_weight * (pos + neg),
    )


def _cosine_with_grads(u: np.ndarray, v: np.ndarray):
    """cos(u, v) and its gradients with respect to the raw vectors."""
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("reward is undefined for zero-norm embeddings")
    uh, vh = u / nu, v / nv
    cos = float(uh @ vh)
    du = (vh - cos * uh) / nu
    dv = (uh - cos * vh) / nv
    return cos, du, dv


def total_loss_with_grads(x_i_emb, x_e_emb, x_s_emb, y_e_emb, y_s_emb,
                          temperature: float, lambda_weight: float):
    """Loss terms plus analytic gradients with respect to all five embeddings
    and the temperature.

    Returns (LossTerms, grads) where grads maps "x_i", "x_e", "x_s", "y_e",
    "y_s" to vectors and "temperature" to a scalar.
    """
    if lambda_weight < 0:
        raise ValueError(f"lambda_weight must be >= 0, got {lambda_weight}")
    T = float(temperature)
    embs = {k: np.asarray(v, dtype=np.float64) for k, v in
            (("x_i", x_i_emb), ("x_e", x_e_emb), ("x_s", x_s_emb),
             ("y_e", y_e_emb), ("y_s", y_s_emb))}
    grads = {k: np.zeros_like(v) for k, v in embs.items()}
    d_temp = 0.0

    def pair_term(text_a, img_a, text_b, img_b, weight):
        # returns -log(sigmoid(r(a) - r(b))); gradient contributions are
        # accumulated with the given loss weight
        nonlocal d_temp
        cos_a, dta, dia = _cosine_with_grads(embs[text_a], embs[img_a])
        cos_b, dtb, dib = _cosine_with_grads(embs[text_b], embs[img_b])
        diff = T * (cos_a - cos_b)
        loss = _neg_log_pref(diff)
        ddiff = -float(expit(-diff))  # d loss / d diff
        grads[text_a] += weight * ddiff * T * dta
        grads[img_a] += weight * ddiff * T * dia
        grads[text_b] -= weight * ddiff * T * dtb
        grads[img_b] -= weight * ddiff * T * dib
        d_temp += weight * ddiff * (cos_a - cos_b)
        return loss

    ipa = pair_term("x_i", "y_e", "x_i", "y_s", 1.0)
    pos = pair_term("x_e", "y_e", "x_s", "y_e", lambda_weight)
    neg = pair_term("x_s", "y_s", "x_e", "y_s", lambda_weight)

    terms = LossTerms(
        ipa=ipa,
        iee_pos=pos,
        iee_neg=neg,
        lambda_weight=lambda_weight,
        total=ipa + lambda_weight * (pos + neg),
    )
    grads["temperature"] = d_temp
    return terms, grads
