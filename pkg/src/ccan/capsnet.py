"""Capsule layers: prediction vectors, routing-by-agreement and norm embeddings."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .tensor import Parameter, Tensor

squash = T.squash


@dataclass
class CapsuleBank:
    """Capsule vectors of shape (N, M, d), or (M, d) for a single item."""

    vectors: Tensor
    layer_tag: str = "primary"

    @property
    def count(self) -> int:
        return self.vectors.shape[-2]

    @property
    def dim(self) -> int:
        return self.vectors.shape[-1]


@dataclass
class RoutingState:
    logits: np.ndarray  # (N, K_in, K_out)
    couplings: np.ndarray  # (N, K_in, K_out), rows sum to 1
    predictions: np.ndarray  # (N, K_in, K_out, d_out)
    max_iterations: int


def capsule_weights(n_in: int, n_out: int, dim_in: int, dim_out: int, rng: np.random.Generator,
                    dtype=np.float32, scale: float = 0.05, name: str = "capsule.W") -> Parameter:
    """Transformation matrices W[k, l] of shape (dim_in, dim_out), uniform in +-scale."""
    w = rng.uniform(-scale, scale, size=(n_in, n_out, dim_in, dim_out)).astype(dtype)
    return Parameter(w, name=name)


def predict(u: Tensor, weights: Tensor) -> Tensor:
    """Prediction vectors u_hat[n, k, l] = u[n, k] @ W[k, l].

    u: (N, K_in, d_in); weights: (K_in, K_out, d_in, d_out).
    Returns (N, K_in, K_out, d_out).
    """
    if u.ndim == 2:
        u = u.reshape(1, *u.shape)
    n, k_in, d_in = u.shape
    if weights.ndim != 4 or weights.shape[0] != k_in or weights.shape[2] != d_in:
        raise ConfigError(f"capsule weights {weights.shape} do not match input bank {u.shape}")
    _, k_out, _, d_out = weights.shape
    w = weights.transpose(0, 2, 1, 3).reshape(k_in, d_in, k_out * d_out)
    out = u.transpose(1, 0, 2) @ w  # (K_in, N, K_out * d_out)
    return out.reshape(k_in, n, k_out, d_out).transpose(1, 0, 2, 3)


def dynamic_routing(u_hat: Tensor, max_iterations: int = 3, variant: str = "standard"):
    """Routing by agreement between two capsule layers.

    Logits start at zero on every call and are never trained; gradients flow
    through every iteration. Returns the output capsules (N, K_out, d_out)
    and the final :class:`RoutingState`.
    """
    if max_iterations < 1:
        raise ConfigError(f"max_iterations must be >= 1, got {max_iterations}")
    if u_hat.ndim == 3:
        u_hat = u_hat.reshape(1, *u_hat.shape)
    n, k_in, k_out, d_out = u_hat.shape
    b = Tensor(np.zeros((n, k_in, k_out), dtype=u_hat.dtype))
    for _ in range(max_iterations):
        c = T.softmax(b, axis=2)
        s = (c.reshape(n, k_in, k_out, 1) * u_hat).sum(axis=1)
        v = T.squash(s, axis=-1, variant=variant)
        b = b + (u_hat * v.reshape(n, 1, k_out, d_out)).sum(axis=-1)
    state = RoutingState(b.data, c.data, u_hat.data, max_iterations)
    return v, state


def embedding(class_caps: Tensor) -> Tensor:
    """Deep embedding: the 2-norm of each class capsule, shape (N, K_out)."""
    return T.norm(class_caps, axis=-1)
