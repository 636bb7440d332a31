"""Gradient estimators for expectations over discrete samples.

Every estimator implements :meth:`Estimator.objective`, which runs a model's
forward function with a ``sample(index, logits, kind)`` callback and returns
a surrogate loss whose gradient is the estimate. Score-function estimators
use non-reparameterized samples plus ``stop_gradient(signal) * log p(z)``
terms; path-derivative estimators return samples that gradients flow
through. The standalone functions (:func:`sf_gradient` and friends) apply
the same machinery to a single parameter vector and a cost closure.

Logits are the parameterization everywhere: Bernoulli units use
``p = sigmoid(logits)``, categorical groups put classes on the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import distributions as D
from .graph import Graph, Node

NAMES = ("sf", "nvil", "darn", "muprop", "st", "st_slope", "gs", "st_gs")

BERNOULLI = "bernoulli"
CATEGORICAL = "categorical"


# --------------------------------------------------------------------------
# baseline state


@dataclass(frozen=True)
class BaselineState:
    """Running statistics of the cost plus NVIL's input-dependent baseline.

    Immutable; :meth:`update` and :meth:`fit_step` return new states.
    """

    mean: float = 0.0
    var: float = 0.0
    net: Optional[dict] = None
    decay: float = 0.9
    steps: int = 0

    @classmethod
    def initial(cls, context_dim: int = 1, hidden: int = 16, seed: int = 0, decay: float = 0.9):
        # output layer starts at zero so the initial baseline is exactly 0
        rng = np.random.default_rng(seed)
        limit = np.sqrt(6.0 / (context_dim + hidden))
        net = {
            "W1": rng.uniform(-limit, limit, (context_dim, hidden)),
            "b1": np.zeros(hidden),
            "W2": np.zeros((hidden, 1)),
            "b2": np.zeros(1),
        }
        return cls(net=net, decay=decay)

    @property
    def std(self) -> float:
        return float(np.sqrt(self.var))

    @property
    def normalizer(self) -> float:
        return max(1.0, self.std)

    def update(self, f: np.ndarray) -> "BaselineState":
        f = np.asarray(f, dtype=np.float64)
        if self.steps == 0:
            return replace(self, mean=float(f.mean()), var=float(f.var()), steps=1)
        d = self.decay
        mean = d * self.mean + (1 - d) * float(f.mean())
        var = d * self.var + (1 - d) * float(np.mean((f - self.mean) ** 2))
        return replace(self, mean=mean, var=var, steps=self.steps + 1)

    def predict(self, context: np.ndarray) -> np.ndarray:
        if self.net is None:
            return np.zeros(len(context))
        h = np.tanh(context @ self.net["W1"] + self.net["b1"])
        return (h @ self.net["W2"] + self.net["b2"])[:, 0]

    def fit_step(self, context: np.ndarray, target: np.ndarray, lr: float) -> "BaselineState":
        """One SGD step on the squared error of ``predict(context)``."""
        g = Graph()
        p = {k: g.param(v, name=k) for k, v in self.net.items()}
        h = g.tanh(g.constant(context) @ p["W1"] + p["b1"])
        pred = (h @ p["W2"] + p["b2"]).reshape(-1)
        loss = g.square(pred - g.constant(target)).mean()
        grads = g.grads_by_name(g.backward(loss))
        net = {k: v - lr * grads[k] for k, v in self.net.items()}
        return replace(self, net=net)


# --------------------------------------------------------------------------
# shared pieces


@dataclass
class Layer:
    """One stochastic layer seen during a forward pass."""

    index: int
    kind: str
    logits: Node
    sample: Node

    @property
    def hard(self) -> np.ndarray:
        return self.sample.value


@dataclass
class Objective:
    loss: Node  # scalar surrogate; its gradient is the estimate
    cost: Node  # per-example cost, shape (n,)
    state: Optional[BaselineState] = None
    layers: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


@dataclass
class EstimatorOutput:
    gradient: np.ndarray
    name: str
    samples: int
    state: Optional[BaselineState] = None
    state_version: int = 0
    diagnostics: dict = field(default_factory=dict)


def _check_kind(kind):
    if kind not in (BERNOULLI, CATEGORICAL):
        raise ValueError(f"unknown latent kind {kind!r}")


def _batch_sum(g: Graph, x: Node) -> Node:
    """Sum over every axis except the first."""
    if x.value.ndim == 1:
        return x
    return x.reshape(x.shape[0], -1).sum(axis=1)


def mean_node(g: Graph, logits: Node, kind: str) -> Node:
    return g.sigmoid(logits) if kind == BERNOULLI else g.softmax(logits)


def log_prob_node(g: Graph, z, logits: Node, kind: str) -> Node:
    """Per-example log-probability of the whole layer, shape (n,)."""
    if kind == BERNOULLI:
        return _batch_sum(g, D.bernoulli_log_prob_node(g, z, logits))
    return _batch_sum(g, D.categorical_log_prob_node(g, z, logits))


def discrete_sample(g: Graph, logits: Node, kind: str, rng) -> Node:
    """Exact draw that blocks gradients (used for score functions and eval)."""
    if kind == BERNOULLI:
        return D.bernoulli_node(g, logits, rng=rng)
    return D.categorical_node(g, logits, rng=rng)


def _split(out):
    """Forward functions return ``cost`` or ``(cost, extra)``.

    ``extra`` is a per-example loss term that does not depend on the samples
    (an analytic KL, say); it is differentiated directly and never enters
    a learning signal.
    """
    if isinstance(out, tuple):
        return out
    return out, None


def _total(cost, extra):
    return cost if extra is None else cost + extra


def _softmax(logits):
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def slope_schedule(t: int, rate: float, s_max: float = 5.0) -> float:
    """``min(s_max, 1 + rate * t)``."""
    return min(s_max, 1.0 + rate * t)


# --------------------------------------------------------------------------
# estimators


@dataclass(frozen=True)
class Estimator:
    tau: float = 1.0
    normalize: bool = False
    slope: float = 1.0
    baseline_lr: float = 0.01

    name = "base"
    score_function = False

    def objective(self, g: Graph, forward: Callable, rng, state=None, context=None) -> Objective:
        raise NotImplementedError


@dataclass(frozen=True)
class _PathEstimator(Estimator):
    """Estimators whose samples carry gradients; the loss is the mean cost."""

    def sample(self, g, logits, kind, rng, tau=None):
        raise NotImplementedError

    def objective(self, g, forward, rng, state=None, context=None):
        layers = []

        def sample(index, logits, kind, tau=None):
            _check_kind(kind)
            z = self.sample(g, logits, kind, rng, tau=tau)
            layers.append(Layer(index, kind, logits, z))
            return z

        cost, extra = _split(forward(g, sample))
        total = _total(cost, extra)
        return Objective(total.mean(), total, state, layers, {"f": cost.value})


@dataclass(frozen=True)
class StraightThrough(_PathEstimator):
    """Discrete forward sample, backward through the (slope-scaled) mean.

    The categorical route applies the one-hot's gradient to
    ``softmax(slope * logits)``; this is a categorical analogue of the
    Bernoulli estimator and is labelled as such in diagnostics.
    """

    name = "st"

    def sample(self, g, logits, kind, rng, tau=None):
        hard = discrete_sample(g, logits, kind, rng)
        scaled = logits if self.slope == 1.0 else logits * self.slope
        soft = mean_node(g, scaled, kind)
        z = g.straight_through(g.constant(hard.value), soft)
        label = "st_bernoulli" if kind == BERNOULLI else "st_categorical_analogue"
        return g.stochastic(z, label, noise=hard.noise, reparameterized=True)


@dataclass(frozen=True)
class SlopeAnnealedST(StraightThrough):
    name = "st_slope"


@dataclass(frozen=True)
class GumbelSoftmax(_PathEstimator):
    name = "gs"

    def sample(self, g, logits, kind, rng, tau=None):
        tau = self.tau if tau is None else tau
        if kind == BERNOULLI:
            return D.binary_concrete_node(g, logits, tau, rng=rng)
        return D.gumbel_softmax_node(g, logits, tau, rng=rng)


@dataclass(frozen=True)
class STGumbelSoftmax(_PathEstimator):
    name = "st_gs"

    def sample(self, g, logits, kind, rng, tau=None):
        tau = self.tau if tau is None else tau
        if kind == BERNOULLI:
            return D.st_binary_concrete_node(g, logits, tau, rng=rng)
        return D.st_gumbel_softmax_node(g, logits, tau, rng=rng)


@dataclass(frozen=True)
class ScoreFunction(Estimator):
    """REINFORCE with optional moving-average centering.

    ``baseline=True`` subtracts the running mean of the cost (computed from
    previous calls only, so the estimate stays unbiased).
    """

    normalize: bool = True
    baseline: bool = False

    name = "sf"
    score_function = True
    analytic_correction = False

    def _taylor(self, forward, layers, f):
        """Per-layer ``(b, fprime, zbar)``; plain score functions have none."""
        return [None] * len(layers)

    def _signal_baseline(self, state, context, n):
        return np.full(n, state.mean) if self.baseline else np.zeros(n)

    def _layer_signal(self, centered, taylor):
        return centered if taylor is None else centered - taylor.baseline

    def _next_state(self, state, f, context):
        return state.update(f)

    def objective(self, g, forward, rng, state=None, context=None):
        layers = []

        def sample(index, logits, kind, tau=None):
            _check_kind(kind)
            z = discrete_sample(g, logits, kind, rng)
            layers.append(Layer(index, kind, logits, z))
            return z

        cost, extra = _split(forward(g, sample))
        f = cost.value
        n = f.shape[0]
        if state is None:
            state = self.initial_state(context)
        if context is None:
            context = np.ones((n, 1))
        norm = state.normalizer if self.normalize else 1.0
        centered = f - self._signal_baseline(state, context, n)
        taylor = self._taylor(forward, layers, f)

        terms = [_total(cost, extra).mean()]
        signals = []
        for layer, tay in zip(layers, taylor):
            signal = self._layer_signal(centered, tay) / norm
            signals.append(signal)
            score = log_prob_node(g, layer.sample, layer.logits, layer.kind)
            terms.append((g.constant(signal) * score).mean())
            if tay is not None and self.analytic_correction:
                mu = mean_node(g, layer.logits, layer.kind)
                corr = _batch_sum(g, g.constant(tay.fprime / norm) * mu)
                terms.append(corr.mean())
        loss = terms[0]
        for t in terms[1:]:
            loss = loss + t
        diagnostics = {
            "f": f,
            "baseline": f - centered,
            "signal": signals[0] if len(signals) == 1 else signals,
            "normalizer": norm,
        }
        new_state = self._next_state(state, f, context)
        return Objective(loss, _total(cost, extra), new_state, layers, diagnostics)

    def initial_state(self, context=None):
        return BaselineState()


@dataclass(frozen=True)
class NVIL(ScoreFunction):
    """Moving-average centering, a one-hidden-layer input baseline fitted to
    ``f - f_bar``, and variance normalization by ``max(1, sigma_f)``."""

    baseline: bool = True
    hidden: int = 16
    name = "nvil"

    def initial_state(self, context=None):
        dim = 1 if context is None else np.asarray(context).shape[-1]
        return BaselineState.initial(dim, self.hidden)

    def _signal_baseline(self, state, context, n):
        if state.net is None:
            state = self.initial_state(context)
        return state.mean + state.predict(context)

    def _next_state(self, state, f, context):
        if state.net is None:
            state = replace(self.initial_state(context), mean=state.mean, var=state.var, steps=state.steps)
        fitted = state.fit_step(context, f - state.mean, self.baseline_lr)
        return fitted.update(f)


@dataclass
class Taylor:
    """First-order expansion of the cost around ``zbar`` for one layer."""

    fbar: np.ndarray  # f(zbar), shape (n,)
    fprime: np.ndarray  # df/dz at zbar, shape of the layer
    zbar: np.ndarray
    linear: np.ndarray  # f'(zbar) . (z - zbar), shape (n,)

    @property
    def baseline(self):
        return self.fbar + self.linear


@dataclass(frozen=True)
class _Taylor(ScoreFunction):
    """First-order Taylor baseline ``f(zbar) + f'(zbar) (z - zbar)``.

    The cost and its derivative at ``zbar`` come from re-running the forward
    pass on a fresh graph with earlier layers pinned to their samples, this
    layer set to ``zbar``, and later layers replaced by their means.
    """

    def zbar(self, logits: np.ndarray, kind: str) -> np.ndarray:
        raise NotImplementedError

    def _taylor(self, forward, layers, f):
        out = []
        for target in layers:
            zbar = self.zbar(target.logits.value, target.kind)
            g2 = Graph()
            leaf = []

            def sample(index, logits, kind, tau=None):
                if index < target.index:
                    return g2.constant(layers[index].hard)
                if index == target.index:
                    leaf.append(g2.param(zbar, name="__zbar__"))
                    return leaf[0]
                return mean_node(g2, logits, kind)

            cost2, _ = _split(forward(g2, sample))
            fprime = g2.backward(cost2.sum())[leaf[0].id]
            diff = (target.hard - zbar) * fprime
            linear = diff.reshape(diff.shape[0], -1).sum(axis=1)
            out.append(Taylor(cost2.value, fprime, zbar, linear))
        return out


@dataclass(frozen=True)
class DARN(_Taylor):
    """Linear Taylor term around 1/2 (Bernoulli) or the class probabilities
    (categorical) as the learning signal.

    ``f'(zbar) (z - zbar) * grad log p(z)`` is a one-sample estimate of the
    Taylor baseline's own contribution; the residual ``f - b`` is dropped,
    which is exact when that residual is constant over outcomes (quadratic
    costs on binary units) and biased otherwise.
    """

    name = "darn"

    def _layer_signal(self, centered, taylor):
        return taylor.linear

    def zbar(self, logits, kind):
        if kind == BERNOULLI:
            return np.full(logits.shape, 0.5)
        return _softmax(logits)


@dataclass(frozen=True)
class MuProp(_Taylor):
    """Taylor baseline around the mean-field point plus its analytic
    correction ``f'(zbar) * grad E[z]``."""

    name = "muprop"
    analytic_correction = True

    def zbar(self, logits, kind):
        if kind == BERNOULLI:
            return 1.0 / (1.0 + np.exp(-logits))
        return _softmax(logits)


_REGISTRY = {
    "sf": ScoreFunction,
    "nvil": NVIL,
    "darn": DARN,
    "muprop": MuProp,
    "st": StraightThrough,
    "st_slope": SlopeAnnealedST,
    "gs": GumbelSoftmax,
    "st_gs": STGumbelSoftmax,
}


def get_estimator(name: str, **kwargs) -> Estimator:
    """Build an estimator from its name (``sf | nvil | darn | muprop | st |
    st_slope | gs | st_gs``)."""
    try:
        cls = _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown estimator {name!r}; expected one of {NAMES}") from None
    return cls(**kwargs)


# --------------------------------------------------------------------------
# standalone interface: one parameter vector, a cost closure


@dataclass
class EstimatorInput:
    """Parameters ``logits`` of one latent (``(k,)`` categorical or ``(d,)``
    Bernoulli), a cost closure mapping a batch of samples (graph node of
    shape ``(m, ...)``) to per-sample costs ``(m,)``, and ``m`` samples."""

    logits: np.ndarray
    cost: Callable[[Graph, Node], Node]
    rng: np.random.Generator
    kind: str = CATEGORICAL
    m: int = 1
    context: Optional[np.ndarray] = None

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        _check_kind(self.kind)
        if self.m < 1:
            raise ValueError("need at least one sample")


def per_sample_gradients(estimator: Estimator, inp: EstimatorInput, state=None):
    """Return ``(grads, objective)`` with one gradient row per sample.

    The parameter vector is tiled ``m`` times; because samples are
    independent rows, the gradient of the summed surrogate with respect to
    row ``i`` is the single-sample estimate for draw ``i``.
    """
    m = inp.m
    tiled = np.broadcast_to(inp.logits, (m,) + inp.logits.shape)
    context = None if inp.context is None else np.broadcast_to(inp.context, (m,) + np.shape(inp.context)[-1:])
    g = Graph()
    holder = []

    def forward(graph, sample):
        theta = graph.param(tiled, name="theta")
        if graph is g:
            holder.append(theta)
        return inp.cost(graph, sample(0, theta, inp.kind))

    obj = estimator.objective(g, forward, inp.rng, state=state, context=context)
    grads = g.backward(obj.loss)[holder[0].id] * m
    return grads, obj


def estimate(estimator: Estimator, inp: EstimatorInput, state=None) -> EstimatorOutput:
    grads, obj = per_sample_gradients(estimator, inp, state)
    version = obj.state.steps if obj.state is not None else 0
    return EstimatorOutput(grads.mean(axis=0), estimator.name, inp.m, obj.state, version, obj.diagnostics)


def sf_gradient(inp, baseline_state=None, baseline=False, normalize=False) -> EstimatorOutput:
    return estimate(ScoreFunction(baseline=baseline, normalize=normalize), inp, baseline_state)


def nvil_gradient(inp, baseline_state=None, normalize=True, hidden=16, lr=0.01) -> EstimatorOutput:
    return estimate(NVIL(normalize=normalize, hidden=hidden, baseline_lr=lr), inp, baseline_state)


def darn_gradient(inp, baseline_state=None, normalize=False) -> EstimatorOutput:
    return estimate(DARN(normalize=normalize), inp, baseline_state)


def muprop_gradient(inp, baseline_state=None, normalize=False) -> EstimatorOutput:
    return estimate(MuProp(normalize=normalize), inp, baseline_state)


def st_gradient(inp) -> EstimatorOutput:
    return estimate(StraightThrough(), inp)


def slope_annealed_st_gradient(inp, slope: float) -> EstimatorOutput:
    return estimate(SlopeAnnealedST(slope=slope), inp)


def gs_gradient(inp, tau: float) -> EstimatorOutput:
    return estimate(GumbelSoftmax(tau=tau), inp)


def st_gs_gradient(inp, tau: float) -> EstimatorOutput:
    return estimate(STGumbelSoftmax(tau=tau), inp)
