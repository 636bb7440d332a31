"""Semi-supervised VAE with a class variable ``y`` and a Gaussian style ``z``.

Networks (dense, one hidden layer each):

* classifier ``q(y|x)``: ``x -> H -> k`` logits
* encoder ``q(z|x,y)``: ``[x, y] -> H -> (mu, log_sigma)``
* decoder ``p(x|y,z)``: ``[y, z] -> H -> x`` Bernoulli logits

For unlabeled data ``y`` is either summed out over all ``k`` classes or drawn
once from a (straight-through) Gumbel-Softmax and backpropagated through.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import distributions as D
from ..graph import Graph, Node
from .layers import activate, as_nodes, bernoulli_nll, dense, init_dense

MODES = ("marginalize", "gumbel", "st_gumbel")


@dataclass(frozen=True)
class SSVAEConfig:
    k: int = 10
    style_dim: int = 8
    alpha: float = 0.1
    mode: str = "marginalize"
    # the speed benchmark includes k=1 as its degenerate reference point
    allow_single_class: bool = False

    def __post_init__(self):
        if self.k < (1 if self.allow_single_class else 2):
            raise ValueError("need at least two classes")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


def _check_one_hot(y: np.ndarray, k: int) -> None:
    y = np.asarray(y)
    if y.ndim != 2 or y.shape[1] != k or not np.all((y == 0) | (y == 1)) or not np.all(y.sum(axis=1) == 1):
        raise ValueError(f"labels must be one-hot rows of width {k}")


@dataclass(frozen=True)
class SSVAE:
    x_dim: int
    config: SSVAEConfig = SSVAEConfig()
    hidden: int = 64

    @property
    def k(self) -> int:
        return self.config.k

    def init_params(self, rng) -> dict:
        k, s, h, d = self.k, self.config.style_dim, self.hidden, self.x_dim
        params = {}
        init_dense(params, rng, "cls0", d, h)
        init_dense(params, rng, "cls1", h, k)
        init_dense(params, rng, "enc0", d + k, h)
        init_dense(params, rng, "enc1", h, 2 * s)
        init_dense(params, rng, "dec0", k + s, h)
        init_dense(params, rng, "dec1", h, d)
        return params

    # -- network pieces, all on graph nodes ---------------------------------

    def class_logits(self, g: Graph, p: dict, x: Node) -> Node:
        return dense(p, "cls1", activate(g, dense(p, "cls0", x), "relu"))

    def labeled_bound(self, g: Graph, p: dict, x: Node, y: Node, eps: np.ndarray) -> Node:
        """Per-example ``-L(x, y)``: one reparameterized ``z`` draw given ``eps``."""
        s = self.config.style_dim
        h = activate(g, dense(p, "enc0", g.concat([x, y], axis=1)), "relu")
        stats = dense(p, "enc1", h)
        mu, log_sigma = stats[:, :s], stats[:, s:]
        z = D.gaussian_node(g, mu, log_sigma, eps=eps)
        hd = activate(g, dense(p, "dec0", g.concat([y, z], axis=1)), "relu")
        log_px = -bernoulli_nll(g, x.value, dense(p, "dec1", hd))
        return log_px - D.gaussian_kl_node(g, mu, log_sigma) - np.log(self.k)

    def unlabeled_bound(self, g: Graph, p: dict, x: Node, eps: np.ndarray, mode: str, tau: float = 1.0, rng=None, gumbel=None, discretize: bool = False) -> Node:
        """Per-example ``-U(x)``.

        ``marginalize`` sums over every class with ``eps`` shared across
        classes; the relaxed modes evaluate the bound at one sample of ``y``.
        ``discretize`` replaces that sample by its one-hot argmax (no
        gradient through ``y``). The entropy of ``q(y|x)`` is analytic in
        all modes.
        """
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        n, k = x.shape[0], self.k
        logits = self.class_logits(g, p, x)
        entropy = D.entropy_node(g, logits)
        if mode == "marginalize":
            xr = g.constant(np.repeat(x.value, k, axis=0))
            yr = g.constant(np.tile(np.eye(k), (n, 1)))
            bound = self.labeled_bound(g, p, xr, yr, np.repeat(eps, k, axis=0)).reshape(n, k)
            return (g.softmax(logits) * bound).sum(axis=1) + entropy
        if discretize:
            if gumbel is None:
                gumbel = D.sample_gumbel(logits.shape, rng)
            y = g.constant(D.one_hot_argmax(logits.value + gumbel))
        elif mode == "gumbel":
            y = D.gumbel_softmax_node(g, logits, tau, rng=rng, gumbel=gumbel)
        else:
            y = D.st_gumbel_softmax_node(g, logits, tau, rng=rng, gumbel=gumbel)
        return self.labeled_bound(g, p, x, y, eps) + entropy

    def objective_terms(self, g: Graph, p: dict, xl, yl, xu, rng, tau: float = 1.0, mode=None, alpha=None, eps_l=None, eps_u=None):
        """``(J, labeled, unlabeled, discriminative)`` as scalar nodes."""
        if len(xl) == 0:
            raise ValueError("labeled batch is empty")
        _check_one_hot(yl, self.k)
        mode = self.config.mode if mode is None else mode
        alpha = self.config.alpha if alpha is None else alpha
        s = self.config.style_dim
        eps_l = rng.standard_normal((len(xl), s)) if eps_l is None else eps_l
        xl_n, yl_n = g.constant(xl), g.constant(yl)
        lab = self.labeled_bound(g, p, xl_n, yl_n, eps_l).mean()
        disc = D.categorical_log_prob_node(g, yl_n, self.class_logits(g, p, xl_n)).mean()
        total = lab + alpha * disc
        unl = None
        if xu is not None and len(xu):
            eps_u = rng.standard_normal((len(xu), s)) if eps_u is None else eps_u
            unl = self.unlabeled_bound(g, p, g.constant(xu), eps_u, mode, tau=tau, rng=rng).mean()
            total = total + unl
        return total, lab, unl, disc

    def loss(self, params, xl, yl, xu, rng, tau: float = 1.0):
        """Negated objective and its gradients by parameter name."""
        g = Graph()
        p = as_nodes(g, params)
        total, *_ = self.objective_terms(g, p, xl, yl, xu, rng, tau=tau)
        neg = -total
        return float(neg.value), g.grads_by_name(g.backward(neg))

    def predict(self, params, x, batch: int = 500) -> np.ndarray:
        out = []
        for s in range(0, len(x), batch):
            g = Graph()
            p = as_nodes(g, params)
            out.append(np.argmax(self.class_logits(g, p, g.constant(x[s : s + batch])).value, axis=1))
        return np.concatenate(out) if out else np.zeros(0, dtype=int)

    def error_rate(self, params, x, labels) -> float:
        return float(np.mean(self.predict(params, x) != np.asarray(labels)))


# -- value-level conveniences -------------------------------------------------


def _eval(model, params, build):
    g = Graph()
    return build(g, as_nodes(g, params))


def ssvae_labeled_bound(x, y, params, model: SSVAE, eps) -> float:
    _check_one_hot(y, model.k)
    return float(_eval(model, params, lambda g, p: model.labeled_bound(g, p, g.constant(x), g.constant(y), eps).value.mean()))


def ssvae_unlabeled_bound(x, params, model: SSVAE, mode: str, eps, tau: float = 1.0, rng=None, gumbel=None, discretize=False) -> np.ndarray:
    """Per-example ``-U(x)`` values."""
    return _eval(model, params, lambda g, p: model.unlabeled_bound(g, p, g.constant(x), eps, mode, tau, rng, gumbel, discretize).value)


def ssvae_objective(xl, yl, xu, params, model: SSVAE, rng, alpha=None, tau: float = 1.0, eps_l=None, eps_u=None) -> dict:
    """Objective value plus its three terms (maximization convention)."""

    def build(g, p):
        total, lab, unl, disc = model.objective_terms(g, p, xl, yl, xu, rng, tau=tau, alpha=alpha, eps_l=eps_l, eps_u=eps_u)
        return {
            "J": float(total.value),
            "labeled": float(lab.value),
            "unlabeled": 0.0 if unl is None else float(unl.value),
            "discriminative": float(disc.value),
        }

    return _eval(model, params, build)


def component_costs(x_dim: int, k: int, style_dim: int, hidden: int) -> dict:
    """Multiply-add counts per example for the classifier (D), encoder (I)
    and decoder (G)."""
    return {
        "D": x_dim * hidden + hidden * k,
        "I": (x_dim + k) * hidden + hidden * 2 * style_dim,
        "G": (k + style_dim) * hidden + hidden * x_dim,
    }


def step_cost_model(k: int, mode: str, D: float, I: float, G: float) -> float:
    """Relative cost of one step: ``D + k (I + G)`` when summing over
    classes, ``D + I + G`` with a single sample."""
    if mode == "marginalize":
        return D + k * (I + G)
    if mode in ("gumbel", "st_gumbel"):
        return D + I + G
    raise ValueError(f"unknown mode {mode!r}")


def predicted_speedup(k: int, D: float, I: float, G: float) -> float:
    return step_cost_model(k, "marginalize", D, I, G) / step_cost_model(k, "gumbel", D, I, G)
