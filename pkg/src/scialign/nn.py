"""Minimal numpy building blocks for the toy encoders and velocity network.

Each layer exposes an explicit forward that returns (output, cache) and a
backward that maps the upstream gradient to (input gradient, parameter
gradients).  Every analytic gradient in the package flows through these
functions and is validated against central finite differences in the tests.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def he_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape)


# ---------------------------------------------------------------------------
# dense

def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    return x @ w + b, (x, w)


def dense_backward(dy: np.ndarray, cache):
    x, w = cache
    dx = dy @ w.T
    dw = x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dx, dw, db


# ---------------------------------------------------------------------------
# 3x3 same-padding convolution over NHWC tensors

def conv3x3_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray):
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # [B,H,W,C,3,3]
    y = np.einsum("bijcuv,uvco->bijo", win, w, optimize=True) + b
    return y, (xp, w)


def conv3x3_backward(dy: np.ndarray, cache):
    xp, w = cache
    h, wd = dy.shape[1], dy.shape[2]
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))
    dw = np.einsum("bijcuv,bijo->uvco", win, dy, optimize=True)
    db = dy.sum(axis=(0, 1, 2))
    dxp = np.zeros_like(xp)
    for u in range(3):
        for v in range(3):
            dxp[:, u:u + h, v:v + wd, :] += np.tensordot(dy, w[u, v], axes=([3], [1]))
    return dxp[:, 1:-1, 1:-1, :], dw, db


# ---------------------------------------------------------------------------
# activations and pooling

def relu_forward(x: np.ndarray):
    return np.maximum(x, 0.0), (x > 0)


def relu_backward(dy: np.ndarray, cache):
    return dy * cache


def tanh_forward(x: np.ndarray):
    y = np.tanh(x)
    return y, y


def tanh_backward(dy: np.ndarray, cache):
    return dy * (1.0 - cache * cache)


def avgpool2_forward(x: np.ndarray):
    b, h, w, c = x.shape
    y = x.reshape(b, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))
    return y, (h, w)


def avgpool2_backward(dy: np.ndarray, cache):
    h, w = cache
    up = np.repeat(np.repeat(dy, 2, axis=1), 2, axis=2)
    return up / 4.0


# ---------------------------------------------------------------------------
# l2 normalization of the trailing axis

def normalize_forward(x: np.ndarray):
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    y = x / n
    return y, (y, n)


def normalize_backward(dy: np.ndarray, cache):
    y, n = cache
    return (dy - (dy * y).sum(axis=-1, keepdims=True) * y) / n


# ---------------------------------------------------------------------------
# optimiser: Adam with decoupled weight decay and warmup-cosine schedule

class AdamW:
    def __init__(self, params: dict[str, np.ndarray], lr: float = 1e-3,
                 betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0,
                 no_decay: tuple[str, ...] = ()):
        self.params = params
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.no_decay = set(no_decay)
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict[str, np.ndarray], lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for key, p in self.params.items():
            g = grads[key]
            self.m[key] = b1 * self.m[key] + (1 - b1) * g
            self.v[key] = b2 * self.v[key] + (1 - b2) * g * g
            update = (self.m[key] / bc1) / (np.sqrt(self.v[key] / bc2) + self.eps)
            if self.weight_decay and key not in self.no_decay:
                update = update + self.weight_decay * p
            p -= lr * update


def warmup_cosine_lr(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warmup followed by a cosine decay to zero."""
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    if total_steps <= warmup_steps:
        return base_lr
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * min(progress, 1.0)))


def check_finite(value: float, context: str) -> float:
    if not np.isfinite(value):
        raise RuntimeError(f"non-finite loss at {context}")
    return value
