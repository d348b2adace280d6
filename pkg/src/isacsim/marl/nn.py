"""Dense networks with hand-written reverse-mode gradients, plus an Adam optimizer."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

OUTPUTS = ("linear", "tanh")


class StaleCacheError(RuntimeError):
    pass


@dataclass
class MlpParams:
    """Layer weights (in x out) and biases; ReLU hidden units."""

    weights: list
    biases: list
    output: str = "linear"
    version: int = 0

    def __post_init__(self):
        if self.output not in OUTPUTS:
            raise ValueError(f"output activation must be one of {OUTPUTS}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching non-empty weight and bias lists")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise ValueError(f"layer {i}: bias shape {b.shape} vs weights {w.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ValueError(f"layer {i}: input {w.shape[0]} vs previous output "
                                 f"{self.weights[i - 1].shape[1]}")

    @classmethod
    def init(cls, sizes: Sequence[int], output: str = "linear",
             rng: Optional[np.random.Generator] = None, final_scale: float = 3e-3) -> "MlpParams":
        rng = rng if rng is not None else np.random.default_rng(0)
        weights, biases = [], []
        for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            bound = final_scale if last else np.sqrt(6.0 / n_in)
            weights.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
            biases.append(np.zeros(n_out))
        return cls(weights, biases, output)

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def tensors(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         self.output)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors())


@dataclass
class MlpCache:
    inputs: list = field(default_factory=list)   # input to each layer
    pre: list = field(default_factory=list)      # pre-activations
    output: Optional[np.ndarray] = None
    version: int = 0
    owner: int = 0


def mlp_forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, MlpCache]:
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[1] != params.weights[0].shape[0]:
        raise ValueError(f"input width {h.shape[1]}, network expects {params.weights[0].shape[0]}")
    cache = MlpCache(version=params.version, owner=id(params))
    n = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.inputs.append(h)
        z = h @ w + b
        cache.pre.append(z)
        if i < n - 1:
            h = np.maximum(z, 0.0)
        elif params.output == "tanh":
            h = np.tanh(z)
        else:
            h = z
    cache.output = h
    return (h[0] if squeeze else h), cache


def mlp_backward(params: MlpParams, cache: MlpCache,
                 grad_out: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradients of sum(grad_out * output) w.r.t. [W0, b0, W1, b1, ...] and the input."""
    if cache.owner != id(params) or cache.version != params.version:
        raise StaleCacheError("cache does not belong to the current parameters")
    g = np.atleast_2d(np.asarray(grad_out, dtype=float))
    n = len(params.weights)
    if params.output == "tanh":
        g = g * (1.0 - cache.output ** 2)
    grads: list = [None] * (2 * n)
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            g = g * (cache.pre[i] > 0)
        grads[2 * i] = cache.inputs[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ params.weights[i].T
    return grads, g


class Adam:
    def __init__(self, params: MlpParams, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(t) for t in params.tensors()]
        self.v = [np.zeros_like(t) for t in params.tensors()]
        self.t = 0

    def step(self, params: MlpParams, grads: list[np.ndarray]) -> None:
        """Descend along ``grads`` in place."""
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        for p, g, m, v in zip(params.tensors(), grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        params.version += 1


def soft_update(main: MlpParams, target: MlpParams, rate: float) -> MlpParams:
    """target <- rate*main + (1-rate)*target, in place; returns target."""
    if not 0 < rate <= 1:
        raise ValueError("soft-update rate must lie in (0, 1]")
    if main.sizes != target.sizes:
        raise ValueError(f"shape mismatch {main.sizes} vs {target.sizes}")
    for m, t in zip(main.tensors(), target.tensors()):
        t *= 1 - rate
        t += rate * m
    target.version += 1
    return target
