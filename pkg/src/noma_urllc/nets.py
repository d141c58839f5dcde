"""Dense policy/value networks with hand-rolled reverse-mode gradients.

Small enough at desk scale that numpy matmuls beat any framework overhead,
and the gradient path stays auditable against finite differences. Both nets
share the trunk shape: input -> H -> H with rectifiers, then either K
independent Bernoulli branch heads (policy) or one scalar head (value).
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

LOGIT_CLIP = 30.0  # keeps sigmoid outputs strictly inside (0, 1) in float64


def _fan_in_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class PolicyNet:
    """Shared trunk with K sigmoid branch heads, one poll probability each."""

    PARAM_ORDER = ("w1", "b1", "w2", "b2", "heads_w", "heads_b")

    def __init__(self, input_size: int, num_devices: int, hidden: int,
                 rng: np.random.Generator):
        self.input_size = input_size
        self.num_devices = num_devices
        self.hidden = hidden
        self.params = {
            "w1": _fan_in_uniform(rng, (input_size, hidden), input_size),
            "b1": np.zeros(hidden),
            "w2": _fan_in_uniform(rng, (hidden, hidden), hidden),
            "b2": np.zeros(hidden),
            "heads_w": _fan_in_uniform(rng, (hidden, num_devices), hidden),
            "heads_b": np.zeros(num_devices),
        }

    def forward(self, x: np.ndarray):
        """Batch forward. Returns (probs, cache) with probs of shape (N, K)."""
        p = self.params
        z1 = x @ p["w1"] + p["b1"]
        a1 = np.maximum(z1, 0.0)
        z2 = a1 @ p["w2"] + p["b2"]
        a2 = np.maximum(z2, 0.0)
        logits = a2 @ p["heads_w"] + p["heads_b"]
        clipped = np.clip(logits, -LOGIT_CLIP, LOGIT_CLIP)
        probs = expit(clipped)
        cache = (x, z1, a1, z2, a2, logits)
        return probs, cache

    def forward_probs(self, x: np.ndarray) -> np.ndarray:
        """Single-sample fast path: x of shape (input_size,) -> (K,) probs."""
        p = self.params
        a1 = np.maximum(x @ p["w1"] + p["b1"], 0.0)
        a2 = np.maximum(a1 @ p["w2"] + p["b2"], 0.0)
        logits = np.clip(a2 @ p["heads_w"] + p["heads_b"], -LOGIT_CLIP, LOGIT_CLIP)
        return expit(logits)

    def backward(self, cache, dlogits: np.ndarray) -> dict:
        """Gradients of a scalar loss given d loss / d logits, shape (N, K)."""
        x, z1, a1, z2, a2, logits = cache
        p = self.params
        dlogits = np.where(np.abs(logits) > LOGIT_CLIP, 0.0, dlogits)
        grads = {
            "heads_w": a2.T @ dlogits,
            "heads_b": dlogits.sum(axis=0),
        }
        da2 = dlogits @ p["heads_w"].T
        dz2 = da2 * (z2 > 0.0)
        grads["w2"] = a1.T @ dz2
        grads["b2"] = dz2.sum(axis=0)
        da1 = dz2 @ p["w2"].T
        dz1 = da1 * (z1 > 0.0)
        grads["w1"] = x.T @ dz1
        grads["b1"] = dz1.sum(axis=0)
        return grads


class ValueNet:
    """Same trunk shape as the policy, scalar state-value head."""

    PARAM_ORDER = ("w1", "b1", "w2", "b2", "head_w", "head_b")

    def __init__(self, input_size: int, hidden: int, rng: np.random.Generator):
        self.input_size = input_size
        self.hidden = hidden
        self.params = {
            "w1": _fan_in_uniform(rng, (input_size, hidden), input_size),
            "b1": np.zeros(hidden),
            "w2": _fan_in_uniform(rng, (hidden, hidden), hidden),
            "b2": np.zeros(hidden),
            "head_w": _fan_in_uniform(rng, (hidden,), hidden),
            "head_b": np.zeros(1),
        }

    def forward(self, x: np.ndarray):
        p = self.params
        z1 = x @ p["w1"] + p["b1"]
        a1 = np.maximum(z1, 0.0)
        z2 = a1 @ p["w2"] + p["b2"]
        a2 = np.maximum(z2, 0.0)
        v = a2 @ p["head_w"] + p["head_b"][0]
        cache = (x, z1, a1, z2, a2)
        return v, cache

    def backward(self, cache, dv: np.ndarray) -> dict:
        """Gradients given d loss / d value, shape (N,)."""
        x, z1, a1, z2, a2 = cache
        p = self.params
        grads = {
            "head_w": a2.T @ dv,
            "head_b": np.array([dv.sum()]),
        }
        da2 = np.outer(dv, p["head_w"])
        dz2 = da2 * (z2 > 0.0)
        grads["w2"] = a1.T @ dz2
        grads["b2"] = dz2.sum(axis=0)
        da1 = dz2 @ p["w2"].T
        dz1 = da1 * (z1 > 0.0)
        grads["w1"] = x.T @ dz1
        grads["b1"] = dz1.sum(axis=0)
        return grads


class Adam:
    """Plain Adam with bias correction; ascend=True flips to gradient ascent."""

    def __init__(self, params: dict, lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, ascend: bool = False):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for key, g in grads.items():
            if ascend:
                g = -g
            self.m[key] = b1 * self.m[key] + (1.0 - b1) * g
            self.v[key] = b2 * self.v[key] + (1.0 - b2) * g * g
            m_hat = self.m[key] / (1.0 - b1 ** self.t)
            v_hat = self.v[key] / (1.0 - b2 ** self.t)
            params[key] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def flops_estimate(architecture: str, num_devices: int, hidden: int = 256,
                   input_size: int | None = None) -> int:
    """Published per-decision FLOPs cost model of the compared architectures.

    These are the closed forms from the complexity comparison (trunk biases
    counted, head biases not), kept as documentation of the cost model rather
    than derived from the network objects.
    """
    k, h = num_devices, hidden
    if k < 1 or h < 1:
        raise ValueError("num_devices and hidden must be >= 1")
    if architecture == "noma_ppo":
        h_in = 5 * k + 1 if input_size is None else input_size
        return 2 * h_in * h + 4 * h * h + 3 * h + 2 * h * k
    if architecture == "bdq":
        h_in = 5 * k + 1 if input_size is None else input_size
        return 2 * h_in * h + 6 * h * h + 3 * h + 6 * h * k
    if architecture == "idrqn_agent":
        h_in = 7 if input_size is None else input_size
        return 6 * h * k * (h_in + h) + 10 * h * k
    raise ValueError(f"unknown architecture {architecture!r}")
