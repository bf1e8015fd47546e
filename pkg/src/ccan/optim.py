"""Mini-batch gradient descent: plain SGD and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import ConfigError, UsageError
from .tensor import Tensor

OPTIMIZERS = ("plain-sgd", "adam")


@dataclass
class SgdConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    optimizer_kind: str = "plain-sgd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer_kind not in OPTIMIZERS:
            raise ConfigError(f"optimizer_kind must be one of {OPTIMIZERS}, got {self.optimizer_kind!r}")


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: dict = field(default_factory=dict)  # per-parameter step count for bias correction


def sgd_step(params: Iterable[Tensor], cfg: SgdConfig, state: AdamState | None = None) -> None:
    """Apply one update to ``params`` and zero their gradients.

    ``state`` carries Adam moments between calls; it is required for adam.
    """
    params = list(params)
    for p in params:
        if p.grad is None:
            raise UsageError(f"parameter {getattr(p, 'name', p)!r} has no gradient")
    if cfg.optimizer_kind == "plain-sgd":
        for p in params:
            p.data -= (cfg.learning_rate * p.grad).astype(p.dtype, copy=False)
    else:
        if state is None:
            raise UsageError("adam needs an AdamState carried across steps")
        state.step += 1
        for p in params:
            key = id(p)
            m = state.m.get(key)
            if m is None:
                m = state.m[key] = np.zeros_like(p.data)
                state.v[key] = np.zeros_like(p.data)
            v = state.v[key]
            t = state.t[key] = state.t.get(key, 0) + 1
            bc1 = 1.0 - cfg.beta1 ** t
            bc2 = 1.0 - cfg.beta2 ** t
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * p.grad
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * p.grad * p.grad
            update = cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
            p.data -= update.astype(p.dtype, copy=False)
    for p in params:
        p.grad = np.zeros_like(p.data)


class Optimizer:
    """Binds a parameter list to a config and its Adam state."""

    def __init__(self, params: Iterable[Tensor], cfg: SgdConfig):
        self.params = list(params)
        self.cfg = cfg
        self.state = AdamState()

    def add_params(self, params: Iterable[Tensor]):
        """Optimize extra parameters too; existing moments are kept."""
        known = {id(p) for p in self.params}
        self.params += [p for p in params if id(p) not in known]

    def zero_grad(self):
        for p in self.params:
            p.grad = np.zeros_like(p.data)

    def step(self):
        sgd_step(self.params, self.cfg, self.state)
