"""Dense float64 kernels shared by every other module.

Softmax / cross-entropy with analytic gradients, an Adam optimizer over
named parameter dicts, and a central-finite-difference gradient checker.
All functions are pure and deterministic given their inputs; there is no
hidden global state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigError, DimensionError, NumericError
from .validation import as_vector, check_finite

Params = dict[str, np.ndarray]


@dataclass
class GradBundle:
    """A scalar loss together with gradients for every trainable tensor."""

    loss: float
    grads: Params = field(default_factory=dict)

    def scaled(self, factor: float) -> "GradBundle":
        return GradBundle(self.loss * factor,
                          {k: g * factor for k, g in self.grads.items()})

    def add(self, other: "GradBundle") -> "GradBundle":
        grads = dict(self.grads)
        for k, g in other.grads.items():
            grads[k] = grads[k] + g if k in grads else g
        return GradBundle(self.loss + other.loss, grads)


def softmax(logits) -> np.ndarray:
    """Stable softmax over the last axis (max-subtraction)."""
    arr = np.asarray(logits, dtype=np.float64)
    if arr.size == 0:
        raise DimensionError("softmax input must be non-empty")
    check_finite(arr, "logits")
    shifted = arr - arr.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    arr = np.asarray(logits, dtype=np.float64)
    if arr.size == 0:
        raise DimensionError("log_softmax input must be non-empty")
    check_finite(arr, "logits")
    shifted = arr - arr.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits, target: int) -> float:
    """Negative log softmax probability of ``target``. Always >= 0."""
    arr = as_vector(logits, "logits")
    if not 0 <= target < arr.size:
        raise IndexError(f"target {target} out of range for {arr.size} logits")
    return float(-log_softmax(arr)[target])


def cross_entropy_grad(logits, target: int) -> tuple[float, np.ndarray]:
    """Cross-entropy and its gradient w.r.t. the logits."""
    arr = as_vector(logits, "logits")
    if not 0 <= target < arr.size:
        raise IndexError(f"target {target} out of range for {arr.size} logits")
    p = softmax(arr)
    loss = float(-np.log(p[target])) if p[target] > 0 else np.inf
    grad = p.copy()
    grad[target] -= 1.0
    return loss, grad


def batch_cross_entropy(logits: np.ndarray, targets: np.ndarray
                        ) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over rows; returns (loss, dloss/dlogits)."""
    n = logits.shape[0]
    logp = log_softmax(logits)
    loss = float(-logp[np.arange(n), targets].mean())
    grad = softmax(logits)
    grad[np.arange(n), targets] -= 1.0
    return loss, grad / n


class Adam:
    """Adam with bias correction over a dict of named float64 tensors.

    The tensors passed at construction are updated in place by ``step``;
    moment buffers are keyed and iterated in sorted-name order so repeated
    runs are bit-identical.
    """

    def __init__(self, params: Params, learning_rate: float,
                 beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        if learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        self.params = params
        self.lr = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: Params) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name in sorted(self.params):
            g = grads.get(name)
            if g is None:
                g = np.zeros_like(self.params[name])
            if g.shape != self.params[name].shape:
                raise DimensionError(
                    f"gradient shape {g.shape} != parameter shape "
                    f"{self.params[name].shape} for '{name}'")
            check_finite(g, f"grad[{name}]")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            self.params[name] -= update


def adam_step(params: Params, grads: Params, state: Adam) -> Params:
    """Functional wrapper: one Adam update, returns the (mutated) params."""
    state.step(grads)
    return params


def finite_diff_check(loss_fn: Callable[[Params], float],
                      params: Params,
                      analytic: Mapping[str, np.ndarray],
                      epsilon: float = 1e-5,
                      max_coords_per_param: int = 32,
                      seed: int = 0) -> float:
    """Max relative error between analytic grads and central differences.

    ``loss_fn`` is evaluated at perturbed copies of ``params``; coordinates
    are subsampled deterministically when a tensor has more than
    ``max_coords_per_param`` entries. Relative error uses a 1e-12 floor so
    exact zeros compare cleanly.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ConfigError("epsilon must lie in [1e-7, 1e-3]")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in sorted(params):
        base = params[name]
        grad = np.asarray(analytic[name], dtype=np.float64)
        if grad.shape != base.shape:
            raise DimensionError(
                f"analytic grad shape {grad.shape} != param shape "
                f"{base.shape} for '{name}'")
        flat_idx = np.arange(base.size)
        if base.size > max_coords_per_param:
            flat_idx = rng.choice(base.size, size=max_coords_per_param,
                                  replace=False)
            flat_idx.sort()
        for idx in flat_idx:
            coords = np.unravel_index(idx, base.shape) if base.shape else ()
            perturbed = {k: v.copy() for k, v in params.items()}
            perturbed[name][coords] += epsilon
            up = loss_fn(perturbed)
            perturbed[name][coords] -= 2.0 * epsilon
            down = loss_fn(perturbed)
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError("loss_fn returned a non-finite value")
            numeric = (up - down) / (2.0 * epsilon)
            err = abs(float(grad[coords]) - numeric) / (abs(float(grad[coords])) + 1e-12)
            worst = max(worst, err)
    return worst
