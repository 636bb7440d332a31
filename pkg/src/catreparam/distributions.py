"""Gumbel, categorical, Bernoulli, Gaussian and Gumbel-Softmax distributions.

Plain-array samplers live next to graph builders (the ``*_node``
functions) that emit :class:`~catreparam.graph.StochasticNode` samples so
that gradients can flow through reparameterized draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln, logsumexp

from .graph import DomainError, Graph, Node

UNIFORM_EPS = 1e-12
SIMPLEX_TOL = 1e-9


@dataclass(frozen=True)
class CategoricalParams:
    """Unnormalized log-probabilities over the last axis (``k >= 2``)."""

    logits: np.ndarray

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float64)
        if logits.ndim == 0 or logits.shape[-1] < 2:
            raise ValueError("categorical needs k >= 2 classes")
        if np.any(np.isnan(logits)) or np.any(logits == np.inf):
            raise ValueError("logits must be finite or -inf")
        if np.any(np.all(logits == -np.inf, axis=-1)):
            raise ValueError("all logits are -inf")
        object.__setattr__(self, "logits", logits)

    @classmethod
    def from_probs(cls, probs) -> "CategoricalParams":
        with np.errstate(divide="ignore"):
            return cls(np.log(np.asarray(probs, dtype=np.float64)))

    @property
    def k(self) -> int:
        return self.logits.shape[-1]

    @property
    def log_probs(self) -> np.ndarray:
        return self.logits - logsumexp(self.logits, axis=-1, keepdims=True)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)


@dataclass(frozen=True)
class AnnealSchedule:
    rate: float
    floor: float = 0.5
    update_every: int = 1

    def __post_init__(self):
        if self.rate < 0 or not 0 < self.floor <= 1 or self.update_every < 1:
            raise ValueError(f"invalid schedule {self}")


def anneal_temperature(t: int, schedule: AnnealSchedule) -> float:
    """``max(floor, exp(-rate * t_N))`` with ``t_N`` held between updates."""
    if t < 0:
        raise ValueError("step must be non-negative")
    held = schedule.update_every * (t // schedule.update_every)
    return max(schedule.floor, math.exp(-schedule.rate * held))


# --------------------------------------------------------------------------
# Gumbel


def gumbel_from_uniform(u, eps: float = UNIFORM_EPS) -> np.ndarray:
    """Inverse-CDF transform; ``u`` is clamped to ``[eps, 1 - eps]`` first."""
    u = np.clip(np.asarray(u, dtype=np.float64), eps, 1.0 - eps)
    return -np.log(-np.log(u))


def sample_gumbel(shape, rng: np.random.Generator) -> np.ndarray:
    # clamping changes a draw with probability ~2e-12 per variate
    return gumbel_from_uniform(rng.random(shape))


def gumbel_max_sample(params: CategoricalParams, rng=None, gumbel=None) -> np.ndarray:
    """Exact categorical draw ``one_hot(argmax(logits + g))``.

    Pass ``gumbel`` to supply the noise explicitly; it must broadcast to the
    logits. ``-inf`` logits mark zero-probability classes.
    """
    if gumbel is None:
        gumbel = sample_gumbel(params.logits.shape, rng)
    return one_hot_argmax(params.logits + gumbel)


def one_hot_argmax(scores, axis: int = -1) -> np.ndarray:
    """One-hot of the argmax along ``axis``; ties go to the lowest index."""
    scores = np.asarray(scores, dtype=np.float64)
    idx = np.argmax(scores, axis=axis)
    out = np.zeros(scores.shape)
    np.put_along_axis(out, np.expand_dims(idx, axis), 1.0, axis=axis)
    return out


def _softmax(x):
    e = np.exp(x - np.max(x, axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def gumbel_softmax_sample(params: CategoricalParams, tau: float, rng=None, gumbel=None) -> np.ndarray:
    """Relaxed draw ``softmax((logits + g) / tau)`` as a plain array.

    Use :func:`gumbel_softmax_node` when gradients are needed.
    """
    if not tau > 0:
        raise DomainError(f"temperature must be positive, got {tau}")
    if gumbel is None:
        gumbel = sample_gumbel(params.logits.shape, rng)
    return _softmax((params.logits + gumbel) / tau)


def gumbel_softmax_log_density(y, params: CategoricalParams, tau: float) -> np.ndarray:
    """Log density of the Gumbel-Softmax distribution at simplex points ``y``.

    The density is with respect to Lebesgue measure on the first ``k - 1``
    coordinates. Logits are normalized first, so unnormalized input is fine.
    Batched over leading axes of ``y`` and ``params.logits``.
    """
    y = np.asarray(y, dtype=np.float64)
    if not tau > 0:
        raise DomainError(f"temperature must be positive, got {tau}")
    k = params.k
    if y.shape[-1] != k:
        raise ValueError(f"sample has {y.shape[-1]} coordinates, expected {k}")
    if np.any(y <= 0):
        raise DomainError("density is defined on the simplex interior only")
    if np.any(np.abs(y.sum(axis=-1) - 1.0) > SIMPLEX_TOL):
        raise DomainError("sample is off the simplex")
    x = params.log_probs
    log_y = np.log(y)
    return (
        gammaln(k)
        + (k - 1) * math.log(tau)
        - k * logsumexp(x - tau * log_y, axis=-1)
        + np.sum(x - (tau + 1.0) * log_y, axis=-1)
    )


# --------------------------------------------------------------------------
# Bernoulli / categorical / Gaussian helpers


def bernoulli_sample(p, rng: np.random.Generator) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("Bernoulli mean must lie in [0, 1]")
    return (rng.random(p.shape) < p).astype(np.float64)


def bernoulli_log_prob(z, p) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("Bernoulli mean must lie in [0, 1]")
    with np.errstate(divide="ignore"):
        return np.where(z > 0.5, np.log(p), np.log1p(-p))


def categorical_log_prob(z, params: CategoricalParams) -> np.ndarray:
    """``log pi`` of the class selected by one-hot ``z``."""
    z = np.asarray(z, dtype=np.float64)
    lp = params.log_probs
    return np.sum(np.where(z > 0.5, lp, 0.0), axis=-1)


def categorical_kl(q_logits, p_logits) -> np.ndarray:
    q = CategoricalParams(q_logits)
    p = CategoricalParams(p_logits)
    return np.sum(q.probs * (q.log_probs - p.log_probs), axis=-1)


def gaussian_reparam_sample(mu, sigma, rng: np.random.Generator) -> np.ndarray:
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise DomainError("sigma must be positive")
    return mu + sigma * rng.standard_normal(np.shape(sigma))


def gaussian_kl_to_standard(mu, sigma) -> np.ndarray:
    """``KL[N(mu, sigma^2) || N(0, 1)]`` summed over the last axis."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise DomainError("sigma must be positive")
    return 0.5 * np.sum(mu**2 + sigma**2 - 1.0 - 2.0 * np.log(sigma), axis=-1)


# --------------------------------------------------------------------------
# graph builders


def gumbel_softmax_node(g: Graph, logits: Node, tau, rng=None, gumbel=None):
    """Reparameterized relaxed sample; gradients flow back to ``logits``.

    ``tau`` may be a positive float or a positive scalar node (learned
    temperature), in which case it also receives gradients.
    """
    if gumbel is None:
        gumbel = sample_gumbel(logits.shape, rng)
    if isinstance(tau, Node):
        if np.any(tau.value <= 0):
            raise DomainError("temperature must be positive")
        y = g.softmax((logits + g.constant(gumbel)) / tau)
    else:
        if not tau > 0:
            raise DomainError(f"temperature must be positive, got {tau}")
        y = g.tempered_softmax(logits + g.constant(gumbel), tau)
    return g.stochastic(y, "gumbel_softmax", noise=gumbel, reparameterized=True)


def logistic_from_uniform(u, eps: float = UNIFORM_EPS) -> np.ndarray:
    """Difference of two Gumbel(0, 1) variates, drawn with one uniform."""
    u = np.clip(np.asarray(u, dtype=np.float64), eps, 1.0 - eps)
    return np.log(u) - np.log1p(-u)


def binary_concrete_node(g: Graph, logits: Node, tau, rng=None, uniform=None):
    """Two-class Gumbel-Softmax on logits ``(a, 0)``, keeping coordinate 1.

    ``y = sigmoid((a + L) / tau)`` with ``L`` logistic; thresholding ``y`` at
    1/2 is an exact Bernoulli(sigmoid(a)) draw.
    """
    if uniform is None:
        uniform = rng.random(logits.shape)
    noise = g.constant(logistic_from_uniform(uniform))
    if isinstance(tau, Node):
        y = g.sigmoid((logits + noise) / tau)
    else:
        if not tau > 0:
            raise DomainError(f"temperature must be positive, got {tau}")
        y = g.sigmoid((logits + noise) * (1.0 / tau))
    return g.stochastic(y, "binary_concrete", noise=uniform, reparameterized=True)


def st_binary_concrete_node(g: Graph, logits: Node, tau, rng=None, uniform=None):
    y = binary_concrete_node(g, logits, tau, rng=rng, uniform=uniform)
    hard = g.constant((y.value > 0.5).astype(np.float64))
    z = g.straight_through(hard, y)
    return g.stochastic(z, "st_binary_concrete", noise=y.noise, reparameterized=True)


def st_gumbel_softmax_node(g: Graph, logits: Node, tau: float, rng=None, gumbel=None):
    """One-hot forward, relaxed-sample gradient backward."""
    y = gumbel_softmax_node(g, logits, tau, rng=rng, gumbel=gumbel)
    hard = g.argmax_one_hot(y)
    z = g.straight_through(hard, y)
    return g.stochastic(z, "st_gumbel_softmax", noise=y.noise, reparameterized=True)


def categorical_node(g: Graph, logits: Node, rng=None, gumbel=None):
    """Exact categorical draw via Gumbel-Max; blocks the backward sweep."""
    if gumbel is None:
        gumbel = sample_gumbel(logits.shape, rng)
    z = g.constant(one_hot_argmax(logits.value + gumbel))
    return g.stochastic(z, "categorical", noise=gumbel, reparameterized=False)


def bernoulli_node(g: Graph, logits: Node, rng=None, uniform=None):
    """Exact Bernoulli(sigmoid(logits)) draw; blocks the backward sweep."""
    if uniform is None:
        uniform = rng.random(logits.shape)
    p = 1.0 / (1.0 + np.exp(-logits.value))
    z = g.constant((uniform < p).astype(np.float64))
    return g.stochastic(z, "bernoulli", noise=uniform, reparameterized=False)


def gaussian_node(g: Graph, mu: Node, log_sigma: Node, rng=None, eps=None):
    """``mu + exp(log_sigma) * eps`` with ``eps ~ N(0, 1)``."""
    if eps is None:
        eps = rng.standard_normal(mu.shape)
    z = mu + g.exp(log_sigma) * g.constant(eps)
    return g.stochastic(z, "gaussian", noise=eps, reparameterized=True)


def bernoulli_log_prob_node(g: Graph, z, logits: Node) -> Node:
    """``log p(z | sigmoid(logits))`` elementwise, computed from logits."""
    z = z if isinstance(z, Node) else g.constant(z)
    # z*log s(a) + (1-z)*log(1-s(a)) = z*a - softplus(a)
    return z * logits - g.softplus(logits)


def categorical_log_prob_node(g: Graph, z, logits: Node) -> Node:
    """``sum_i z_i log softmax(logits)_i`` over the last axis."""
    z = z if isinstance(z, Node) else g.constant(z)
    return (z * g.log_softmax(logits)).sum(axis=-1)


def categorical_kl_node(g: Graph, q_logits: Node, p_logits: Node) -> Node:
    """``KL[q || p]`` over the last axis; ``p_logits`` broadcasts."""
    lq = g.log_softmax(q_logits)
    lp = g.log_softmax(p_logits)
    return (g.exp(lq) * (lq - lp)).sum(axis=-1)


def bernoulli_kl_node(g: Graph, q_logits: Node, p_logits: Node) -> Node:
    q = g.sigmoid(q_logits)
    # log s(a) = a - softplus(a), log(1 - s(a)) = -softplus(a)
    return q * (q_logits - p_logits) - g.softplus(q_logits) + g.softplus(p_logits)


def gaussian_kl_node(g: Graph, mu: Node, log_sigma: Node) -> Node:
    """``KL[N(mu, sigma^2) || N(0, 1)]`` summed over the last axis."""
    return 0.5 * (g.square(mu) + g.exp(2.0 * log_sigma) - 1.0 - 2.0 * log_sigma).sum(axis=-1)


def entropy_node(g: Graph, logits: Node) -> Node:
    lp = g.log_softmax(logits)
    return -(g.exp(lp) * lp).sum(axis=-1)
