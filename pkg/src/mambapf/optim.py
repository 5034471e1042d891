"""Adam optimizer, gradient clipping, and a finite-difference check harness."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import Tensor
from .errors import InvalidInputError, NumericError

Array = np.ndarray


@dataclass
class Adam:
    """Standard Adam with bias correction over a named parameter dict."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise InvalidInputError("lr must be positive")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise InvalidInputError("betas must lie in [0, 1)")

    def step(self, params: dict[str, Tensor], grads: dict[str, Array]) -> None:
        self.step_count += 1
        t = self.step_count
        for name in params:
            p = params[name]
            g = np.asarray(grads[name], dtype=np.float64)
            if g.shape != p.value.shape:
                raise InvalidInputError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{name} with shape {p.value.shape}"
                )
            if name not in self.m:
                self.m[name] = np.zeros_like(p.value)
                self.v[name] = np.zeros_like(p.value)
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            mhat = self.m[name] / (1.0 - self.beta1 ** t)
            vhat = self.v[name] / (1.0 - self.beta2 ** t)
            p.value = p.value - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def clip_global_norm(grads: dict[str, Array], max_norm: float) -> dict[str, Array]:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    norm = np.sqrt(total)
    if norm <= max_norm or norm == 0.0:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def finite_diff_check(
    f: Callable[[Tensor], Tensor],
    theta: Array,
    eps: float = 1e-4,
) -> float:
    """Compare the tape gradient of ``f`` against central differences.

    ``f`` maps a parameter-vector Tensor to a scalar Tensor. Returns the
    maximum relative error over coordinates, using
    ``|a - n| / max(1e-12, |a| + |n|)``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    p = Tensor(theta.copy(), requires_grad=True)
    out = f(p)
    if out.value.size != 1:
        raise InvalidInputError("finite_diff_check requires a scalar function")
    out.backward()
    analytic = p.grad if p.grad is not None else np.zeros_like(theta)
    analytic = analytic.reshape(-1)

    flat = theta.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] += eps
        f_plus = f(Tensor(bumped.reshape(theta.shape))).item()
        bumped[i] = flat[i] - eps
        f_minus = f(Tensor(bumped.reshape(theta.shape))).item()
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError("non-finite function value during finite differences")
        numeric = (f_plus - f_minus) / (2.0 * eps)
        denom = max(1e-12, abs(analytic[i]) + abs(numeric))
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst
