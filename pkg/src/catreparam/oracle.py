"""Ground truth for checking estimators and densities.

Exact gradients by enumerating every outcome, central finite differences,
quadrature over the simplex, and bias/variance audits of estimators
against the exact answer.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy.stats import norm

from . import distributions as D
from .estimators import BERNOULLI, CATEGORICAL, Estimator, EstimatorInput, per_sample_gradients
from .graph import Graph, Node

MAX_OUTCOMES = 4096
Z_THRESHOLD = 3.0


class OutcomeSpaceTooLarge(ValueError):
    pass


@dataclass
class EnumerationTestbed:
    """A single latent whose outcomes can all be listed.

    ``cost`` is a graph-buildable closure ``cost(g, z) -> (n,)`` taking a
    batch of samples; it must accept both discrete outcomes and relaxed
    samples if relaxed estimators are audited on it.
    """

    name: str
    kind: str
    logits: np.ndarray
    cost: Callable[[Graph, Node], Node]

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if self.n_outcomes > MAX_OUTCOMES:
            raise OutcomeSpaceTooLarge(f"{self.n_outcomes} outcomes exceeds {MAX_OUTCOMES}")

    @property
    def dim(self) -> int:
        return self.logits.shape[-1]

    @property
    def n_outcomes(self) -> int:
        return self.dim if self.kind == CATEGORICAL else 2**self.dim

    def outcomes(self) -> np.ndarray:
        if self.kind == CATEGORICAL:
            return np.eye(self.dim)
        return np.array(list(itertools.product((0.0, 1.0), repeat=self.dim)))

    def _log_probs(self, g, theta, z):
        n = len(z)
        tiled = g.constant(np.ones((n, 1))) * theta
        if self.kind == CATEGORICAL:
            return D.categorical_log_prob_node(g, z, tiled)
        return D.bernoulli_log_prob_node(g, z, tiled).sum(axis=1)

    def probabilities(self, logits=None) -> np.ndarray:
        g = Graph()
        theta = g.constant(self.logits if logits is None else logits)
        return np.exp(self._log_probs(g, theta, self.outcomes()).value)

    def cost_values(self) -> np.ndarray:
        g = Graph()
        return self.cost(g, g.constant(self.outcomes())).value

    def expected_cost(self, logits=None) -> float:
        return float(self.probabilities(logits) @ self.cost_values())

    def input(self, rng, m=1, context=None) -> EstimatorInput:
        return EstimatorInput(self.logits, self.cost, rng, kind=self.kind, m=m, context=context)


def exact_expected_gradient(testbed: EnumerationTestbed) -> np.ndarray:
    """``d/dlogits sum_z p(z) f(z)`` by autodiff through the enumeration."""
    if testbed.n_outcomes > MAX_OUTCOMES:
        raise OutcomeSpaceTooLarge(testbed.n_outcomes)
    g = Graph()
    theta = g.param(testbed.logits, name="theta")
    z = testbed.outcomes()
    p = g.exp(testbed._log_probs(g, theta, z))
    f = testbed.cost(g, g.constant(z))
    loss = (p * g.stop_gradient(f)).sum()
    return g.backward(loss)[theta.id]


def finite_difference(fn: Callable[[np.ndarray], float], theta, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar ``fn`` at every coordinate of ``theta``.

    ``fn`` must be deterministic; freeze any noise before calling.
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    for idx in np.ndindex(theta.shape):
        plus, minus = theta.copy(), theta.copy()
        plus[idx] += h
        minus[idx] -= h
        fp, fm = fn(plus), fn(minus)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {idx}")
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def _simpson_weights(n_intervals: int, width: float) -> np.ndarray:
    if n_intervals % 2:
        n_intervals += 1
    w = np.ones(n_intervals + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * width / (3.0 * n_intervals)


def simplex_quadrature(density: Callable[[np.ndarray], np.ndarray], k: int, resolution: int = 2000, eps: float = 1e-12) -> float:
    """Integrate ``density(y)`` over the (k-1)-simplex, ``k`` in {2, 3}.

    ``density`` maps an ``(N, k)`` array of interior points to ``(N,)``
    values (density w.r.t. Lebesgue measure on the first k-1 coordinates).
    Composite Simpson runs in additive-logratio coordinates
    ``u_i = log(y_i / y_k)``, where ``dy = prod(y) du``; this removes the
    integrable corner singularities that appear for temperatures below 1.
    Each ``u_i`` covers ``y_i / y_k`` in ``[eps, 1/eps]``.
    """
    if k not in (2, 3):
        raise ValueError("quadrature supports k = 2 or 3 only")
    bound = np.log((1.0 - eps) / eps)
    n = resolution + (resolution % 2)
    u = np.linspace(-bound, bound, n + 1)
    w = _simpson_weights(n, 2 * bound)
    if k == 2:
        y = np.stack([1.0 / (1.0 + np.exp(-u)), 1.0 / (1.0 + np.exp(u))], axis=-1)
        vals = density(y) * y[:, 0] * y[:, 1]
        return float(w @ vals)
    u1, u2 = np.meshgrid(u, u, indexing="ij")
    logits = np.stack([u1, u2, np.zeros_like(u1)], axis=-1).reshape(-1, 3)
    y = np.exp(logits - logits.max(axis=1, keepdims=True))
    y /= y.sum(axis=1, keepdims=True)
    vals = (density(y) * np.prod(y, axis=1)).reshape(u1.shape)
    return float(w @ vals @ w)


def gumbel_softmax_density(params: D.CategoricalParams, tau: float) -> Callable:
    """Density callable for :func:`simplex_quadrature`.

    Points whose coordinates underflow to zero lie in the truncated tails;
    they evaluate to zero density.
    """

    def density(y):
        y = np.asarray(y)
        ok = np.all(y > 0, axis=1)
        out = np.zeros(len(y))
        yy = y[ok] / y[ok].sum(axis=1, keepdims=True)
        out[ok] = np.exp(D.gumbel_softmax_log_density(yy, params, tau))
        return out

    return density


# --------------------------------------------------------------------------
# audits


@dataclass
class EstimatorAudit:
    estimator: str
    testbed: str
    n: int
    mean: np.ndarray
    se: np.ndarray
    exact: np.ndarray
    z: np.ndarray
    var: np.ndarray
    threshold: float

    @property
    def total_variance(self) -> float:
        return float(np.sum(self.var))

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))

    @property
    def unbiased(self) -> bool:
        return self.max_abs_z < self.threshold

    @property
    def biased(self) -> bool:
        return self.max_abs_z > self.threshold

    def to_record(self) -> dict:
        rec = asdict(self)
        for key in ("mean", "se", "exact", "z", "var"):
            rec[key] = np.asarray(rec[key]).ravel().tolist()
        return rec

    def to_json(self) -> str:
        return json.dumps(self.to_record())


def bonferroni_threshold(n_coords: int, z: float = Z_THRESHOLD) -> float:
    """Two-sided z threshold at the family-wise level of a single ``|z| > z``."""
    alpha = 2.0 * norm.sf(z)
    return float(norm.isf(alpha / (2.0 * n_coords)))


SE_FLOOR = 1e-12


def _z_scores(mean, exact, se):
    # floor keeps zero-variance estimators from turning rounding into "bias"
    floor = SE_FLOOR * np.maximum(1.0, np.abs(exact))
    return (mean - exact) / np.maximum(se, floor)


def collect_gradients(estimator: Estimator, testbed: EnumerationTestbed, n_trials: int, rng, chunk: int = 1000, context=None):
    """``(n_trials, dim)`` single-sample gradient estimates.

    Baseline state is threaded through chunks in order, so within a chunk
    baselines depend only on earlier chunks.
    """
    rows, state = [], None
    done = 0
    while done < n_trials:
        m = min(chunk, n_trials - done)
        grads, obj = per_sample_gradients(estimator, testbed.input(rng, m=m, context=context), state)
        state = obj.state
        rows.append(grads)
        done += m
    return np.concatenate(rows, axis=0)


def audit_estimator(estimator: Estimator, testbed: EnumerationTestbed, n_trials: int, seed: int = 0, chunk: int = 1000, context=None) -> EstimatorAudit:
    """Compare the estimator's mean gradient with the exact one.

    Deterministic given ``(seed, n_trials, chunk)``.
    """
    if n_trials < 1000:
        raise ValueError("audits need at least 1000 trials")
    rng = np.random.default_rng(seed)
    grads = collect_gradients(estimator, testbed, n_trials, rng, chunk, context)
    return summarize(estimator.name, testbed, grads)


def summarize(name: str, testbed: EnumerationTestbed, grads: np.ndarray) -> EstimatorAudit:
    n = len(grads)
    mean = grads.mean(axis=0)
    var = grads.var(axis=0, ddof=1)
    se = np.sqrt(var / n)
    exact = exact_expected_gradient(testbed)
    z = _z_scores(mean, exact, se)
    return EstimatorAudit(name, testbed.name, n, mean, se, exact, z, var, bonferroni_threshold(testbed.dim))


# --------------------------------------------------------------------------
# standard testbeds


def linear_cost(c):
    c = np.asarray(c, dtype=np.float64)

    def cost(g, z):
        return (z * g.constant(c)).sum(axis=1)

    return cost


def polynomial_cost(w, degree: int, offset: float = 0.0, scale: float = 1.0):
    """``scale * (w . z - offset) ** degree``."""
    w = np.asarray(w, dtype=np.float64)

    def cost(g, z):
        s = (z * g.constant(w)).sum(axis=1) - offset
        out = s
        for _ in range(degree - 1):
            out = out * s
        return out * scale

    return cost


def categorical_linear_testbed(logits=(0.3, -0.2, 0.5), c=(1.0, -0.5, 2.0), name="cat_linear"):
    return EnumerationTestbed(name, CATEGORICAL, np.asarray(logits), linear_cost(c))


def bernoulli_polynomial_testbed(logits, w, degree, offset=0.0, scale=1.0, name=None):
    name = name or f"bern{len(logits)}_deg{degree}"
    return EnumerationTestbed(name, BERNOULLI, np.asarray(logits), polynomial_cost(w, degree, offset, scale))


def cost_table_testbed(kind, logits, table, name="table"):
    """Arbitrary per-outcome costs; only score-function estimators apply."""
    table = np.asarray(table, dtype=np.float64)
    logits = np.asarray(logits, dtype=np.float64)
    d = logits.shape[-1]
    if kind == CATEGORICAL:
        return EnumerationTestbed(name, kind, logits, linear_cost(table))
    powers = 2.0 ** np.arange(d - 1, -1, -1)

    def cost(g, z):
        idx = (z.value @ powers).round().astype(int)
        return g.constant(table[idx])

    return EnumerationTestbed(name, kind, logits, cost)
