"""Stochastic binary/categorical network for structured output prediction.

Predicts the lower half of an image from its upper half through two
stochastic hidden layers: ``x_upper -> h1 -> h2 -> x_lower``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..estimators import Estimator, discrete_sample
from ..graph import Graph
from .layers import LatentSpec, LayerSpec, as_nodes, bernoulli_nll, dense, init_dense, log_mean_exp, stochastic


@dataclass(frozen=True)
class SBN:
    x_dim: int
    y_dim: int
    latent: LatentSpec = LatentSpec()
    n_stochastic: int = 2

    def layer_specs(self) -> list[LayerSpec]:
        w = self.latent.width
        specs = [LayerSpec(self.x_dim, w, self.latent, "sample")]
        specs += [LayerSpec(w, w, self.latent, "sample") for _ in range(self.n_stochastic - 1)]
        specs.append(LayerSpec(w, self.y_dim, None, "sigmoid"))
        return specs

    def architecture(self) -> str:
        mid = "-".join(self.latent.label() for _ in range(self.n_stochastic))
        return f"{self.x_dim}-{mid}-{self.y_dim}"

    def init_params(self, rng) -> dict:
        params = {}
        for i, spec in enumerate(self.layer_specs()):
            init_dense(params, rng, f"l{i}", spec.in_dim, spec.out_dim)
        return params

    def forward(self, params: dict, x_upper: np.ndarray, x_lower: np.ndarray):
        """Cost closure ``forward(g, sample) -> -log p(x_lower | h_last)``."""

        def fwd(g: Graph, sample):
            p = as_nodes(g, params)
            h = g.constant(x_upper)
            for i in range(self.n_stochastic):
                h = stochastic(g, sample, i, dense(p, f"l{i}", h), self.latent)
            return bernoulli_nll(g, x_lower, dense(p, f"l{self.n_stochastic}", h))

        return fwd

    def loss(self, params, x_upper, x_lower, estimator: Estimator, rng, state=None):
        """Single-sample training loss.

        Returns ``(mean cost, grads by name, objective)``; the objective
        carries the updated baseline state.
        """
        g = Graph()
        obj = estimator.objective(g, self.forward(params, x_upper, x_lower), rng, state=state, context=x_upper)
        grads = g.grads_by_name(g.backward(obj.loss))
        return float(obj.cost.value.mean()), grads, obj

    def log_likelihood_samples(self, params, x_upper, x_lower, m: int, rng) -> np.ndarray:
        """``log p(x_lower | h_i)`` for ``m`` discrete draws per example, shape (n, m)."""
        n = len(x_upper)
        xu = np.repeat(x_upper, m, axis=0)
        xl = np.repeat(x_lower, m, axis=0)
        g = Graph()

        def sample(index, logits, kind, tau=None):
            return discrete_sample(g, logits, kind, rng)

        nll = self.forward(params, xu, xl)(g, sample).value
        return -nll.reshape(n, m)

    def eval_nll(self, params, x_upper, x_lower, m: int, rng, batch: int = 50) -> np.ndarray:
        """Per-example ``-log (1/m) sum_i p(x_lower | h_i)`` with discrete samples."""
        if m < 1:
            raise ValueError("m must be at least 1")
        out = []
        for start in range(0, len(x_upper), batch):
            ll = self.log_likelihood_samples(params, x_upper[start : start + batch], x_lower[start : start + batch], m, rng)
            out.append(-log_mean_exp(ll, axis=1))
        return np.concatenate(out) if out else np.zeros(0)


def sbn_loss(x_upper, x_lower, params, model: SBN, estimator: Estimator, rng, m: int = 1, state=None):
    """Training loss and gradients for ``m == 1``; the ``m``-sample bound
    (no gradients) otherwise."""
    if m < 1:
        raise ValueError("m must be at least 1")
    if m == 1:
        return model.loss(params, x_upper, x_lower, estimator, rng, state)
    return float(model.eval_nll(params, x_upper, x_lower, m, rng).mean()), None, None
