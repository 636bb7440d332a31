"""Dense building blocks shared by the experimental models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..estimators import BERNOULLI, CATEGORICAL
from ..graph import Graph, Node

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LatentSpec:
    """A stochastic layer: ``units`` Bernoulli variables or ``groups``
    independent ``k``-way categoricals (``groups * k`` output units)."""

    kind: str = CATEGORICAL
    groups: int = 20
    k: int = 10
    units: int = 200

    def __post_init__(self):
        if self.kind not in (BERNOULLI, CATEGORICAL):
            raise ValueError(f"invalid latent kind {self.kind!r}")
        if self.kind == CATEGORICAL and (self.k < 2 or self.groups < 1):
            raise ValueError("categorical latent needs k >= 2 and groups >= 1")
        if self.kind == BERNOULLI and self.units < 1:
            raise ValueError("Bernoulli latent needs at least one unit")

    @property
    def width(self) -> int:
        return self.groups * self.k if self.kind == CATEGORICAL else self.units

    @property
    def shape(self) -> tuple:
        return (self.groups, self.k) if self.kind == CATEGORICAL else (self.units,)

    def label(self) -> str:
        return f"({self.groups}x{self.k})" if self.kind == CATEGORICAL else str(self.units)


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    latent: LatentSpec | None = None
    activation: str = "relu"


def glorot(rng, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, (fan_in, fan_out))


def init_dense(params: dict, rng, name: str, fan_in: int, fan_out: int) -> None:
    params[f"{name}.W"] = glorot(rng, fan_in, fan_out)
    params[f"{name}.b"] = np.zeros(fan_out)


def dense(p: dict, name: str, h: Node) -> Node:
    return h @ p[f"{name}.W"] + p[f"{name}.b"]


def activate(g: Graph, h: Node, activation: str) -> Node:
    if activation == "relu":
        return g.relu(h)
    if activation == "tanh":
        return g.tanh(h)
    if activation == "sigmoid":
        return g.sigmoid(h)
    if activation in (None, "linear"):
        return h
    raise ValueError(f"unknown activation {activation!r}")


def as_nodes(g: Graph, params: dict) -> dict:
    return {name: g.param(value, name=name) for name, value in params.items()}


def stochastic(g: Graph, sample, index: int, logits: Node, spec: LatentSpec, tau=None) -> Node:
    """Draw a latent layer through the estimator's ``sample`` callback.

    Categorical logits ``(n, groups*k)`` are viewed as ``(n, groups, k)``
    for the draw and flattened again afterwards.
    """
    if spec.kind == BERNOULLI:
        return sample(index, logits, BERNOULLI, tau=tau)
    n = logits.shape[0]
    z = sample(index, logits.reshape(n, spec.groups, spec.k), CATEGORICAL, tau=tau)
    return z.reshape(n, spec.width)


def bernoulli_nll(g: Graph, x: np.ndarray, logits: Node) -> Node:
    """Per-example ``-log p(x | sigmoid(logits))`` with clamped probabilities."""
    p = g.clip(g.sigmoid(logits), PROB_CLAMP, 1.0 - PROB_CLAMP)
    xc = g.constant(x)
    ll = xc * g.log(p) + (1.0 - xc) * g.log(1.0 - p)
    return -ll.sum(axis=1)


def bernoulli_nll_np(x: np.ndarray, logits: np.ndarray) -> np.ndarray:
    p = np.clip(1.0 / (1.0 + np.exp(-logits)), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return -np.sum(x * np.log(p) + (1.0 - x) * np.log1p(-p), axis=-1)


def log_mean_exp(a: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    return np.squeeze(m, axis) + np.log(np.mean(np.exp(a - m), axis=axis))
