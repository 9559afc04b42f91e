"""First-order optimizers over named parameter dicts, plus global-norm clipping.

Parameters and gradients are ``dict[str, np.ndarray]`` with matching keys;
updates happen in place on the parameter arrays so the model sees them
immediately.
"""

from __future__ import annotations

import numpy as np

__all__ = ["clip_global_norm", "global_norm", "Sgd", "RmsProp", "Adam", "make_optimizer"]


def global_norm(grads: dict[str, np.ndarray]) -> float:
    """Joint L2 norm over every gradient array."""
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    return float(np.sqrt(total))


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Scale all gradients down together if their joint norm exceeds max_norm."""
    if max_norm <= 0:
        raise ValueError(f"max_norm must be > 0, got {max_norm}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    factor = max_norm / norm
    return {name: g * factor for name, g in grads.items()}


class _Optimizer:
    def __init__(self, lr: float):
        self.lr = float(lr)

    def _check(self, params, grads):
        for name, g in grads.items():
            if g.shape != params[name].shape:
                raise ValueError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{name!r} of shape {params[name].shape}"
                )

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        raise NotImplementedError


class Sgd(_Optimizer):
    """Plain gradient descent, no momentum."""

    def step(self, params, grads):
        self._check(params, grads)
        for name, g in grads.items():
            params[name] -= self.lr * g


class RmsProp(_Optimizer):
    """v <- rho*v + (1-rho)*g^2;  p <- p - lr * g / (sqrt(v) + eps)."""

    def __init__(self, lr: float, rho: float = 0.99, eps: float = 1e-8):
        super().__init__(lr)
        self.rho = float(rho)
        self.eps = float(eps)
        self.v: dict[str, np.ndarray] = {}

    def step(self, params, grads):
        self._check(params, grads)
        for name, g in grads.items():
            v = self.v.setdefault(name, np.zeros_like(g))
            v *= self.rho
            v += (1.0 - self.rho) * g * g
            params[name] -= self.lr * g / (np.sqrt(v) + self.eps)


class Adam(_Optimizer):
    """Bias-corrected first/second moment update."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        super().__init__(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params, grads):
        self._check(params, grads)
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self.m.setdefault(name, np.zeros_like(g))
            v = self.v.setdefault(name, np.zeros_like(g))
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            params[name] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(name: str, lr: float) -> _Optimizer:
    name = name.lower()
    if name == "sgd":
        return Sgd(lr)
    if name == "rmsprop":
        return RmsProp(lr)
    if name == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r}")
