"""Variational autoencoder with a discrete latent layer and a learned prior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import distributions as D
from ..estimators import BERNOULLI, Estimator, discrete_sample
from ..graph import Graph
from .layers import LatentSpec, activate, as_nodes, bernoulli_nll, dense, init_dense, log_mean_exp, stochastic


@dataclass(frozen=True)
class VAE:
    """``x -> [hidden] -> q(z|x) -> z -> [hidden] -> p(x|z)``.

    ``hidden == 0`` drops the deterministic layers. The prior over ``z`` is
    a learned categorical (or Bernoulli) distribution, and the KL term is
    always the analytic discrete KL, even when training on relaxed samples.
    """

    x_dim: int
    latent: LatentSpec = LatentSpec()
    hidden: int = 0
    learn_tau: bool = False

    def init_params(self, rng) -> dict:
        params = {}
        w = self.latent.width
        if self.hidden:
            init_dense(params, rng, "enc0", self.x_dim, self.hidden)
            init_dense(params, rng, "enc1", self.hidden, w)
            init_dense(params, rng, "dec0", w, self.hidden)
            init_dense(params, rng, "dec1", self.hidden, self.x_dim)
        else:
            init_dense(params, rng, "enc1", self.x_dim, w)
            init_dense(params, rng, "dec1", w, self.x_dim)
        params["prior"] = np.zeros(self.latent.shape)
        if self.learn_tau:
            params["log_tau"] = np.zeros(())
        return params

    def _encode(self, g, p, x):
        h = g.constant(x)
        if self.hidden:
            h = activate(g, dense(p, "enc0", h), "relu")
        return dense(p, "enc1", h)

    def _decode(self, g, p, z):
        h = z
        if self.hidden:
            h = activate(g, dense(p, "dec0", h), "relu")
        return dense(p, "dec1", h)

    def _kl(self, g, p, logits):
        n = logits.shape[0]
        if self.latent.kind == BERNOULLI:
            return D.bernoulli_kl_node(g, logits, p["prior"]).sum(axis=1)
        q = logits.reshape(n, self.latent.groups, self.latent.k)
        return D.categorical_kl_node(g, q, p["prior"]).sum(axis=1)

    def forward(self, params: dict, x: np.ndarray):
        """Returns ``fwd(g, sample) -> (reconstruction cost, KL)``."""

        def fwd(g: Graph, sample):
            p = as_nodes(g, params)
            logits = self._encode(g, p, x)
            tau = g.exp(p["log_tau"]) if self.learn_tau else None
            z = stochastic(g, sample, 0, logits, self.latent, tau=tau)
            return bernoulli_nll(g, x, self._decode(g, p, z)), self._kl(g, p, logits)

        return fwd

    def loss(self, params, x, estimator: Estimator, rng, state=None):
        """Negative single-sample ELBO; returns ``(mean, grads, objective)``."""
        g = Graph()
        obj = estimator.objective(g, self.forward(params, x), rng, state=state, context=x)
        grads = g.grads_by_name(g.backward(obj.loss))
        return float(obj.cost.value.mean()), grads, obj

    def log_weights(self, params, x, m: int, rng) -> np.ndarray:
        """``log p(x|z) + log p(z) - log q(z|x)`` for ``m`` discrete draws, (n, m)."""
        n = len(x)
        xr = np.repeat(x, m, axis=0)
        g = Graph()
        p = as_nodes(g, params)
        logits = self._encode(g, p, xr)
        if self.latent.kind == BERNOULLI:
            z = discrete_sample(g, logits, BERNOULLI, rng)
            log_q = D.bernoulli_log_prob_node(g, z, logits).sum(axis=1)
            prior = g.constant(np.ones((n * m, 1))) * p["prior"]
            log_prior = D.bernoulli_log_prob_node(g, z, prior).sum(axis=1)
            zf = z
        else:
            q = logits.reshape(n * m, self.latent.groups, self.latent.k)
            z = discrete_sample(g, q, "categorical", rng)
            log_q = D.categorical_log_prob_node(g, z, q).sum(axis=1)
            prior = g.constant(np.ones((n * m, 1, 1))) * p["prior"]
            log_prior = D.categorical_log_prob_node(g, z, prior).sum(axis=1)
            zf = z.reshape(n * m, self.latent.width)
        log_px = -bernoulli_nll(g, xr, self._decode(g, p, zf))
        return (log_px + log_prior - log_q).value.reshape(n, m)

    def eval_bound(self, params, x, m: int, rng, batch: int = 50) -> np.ndarray:
        """Per-example negative ``m``-sample bound with discrete samples."""
        if m < 1:
            raise ValueError("m must be at least 1")
        out = [-log_mean_exp(self.log_weights(params, x[s : s + batch], m, rng), axis=1) for s in range(0, len(x), batch)]
        return np.concatenate(out) if out else np.zeros(0)


def vae_elbo(x, params, model: VAE, estimator: Estimator, rng, state=None):
    """Single-sample ELBO (a bound only for discrete samples) and the
    gradients of its negation."""
    neg, grads, obj = model.loss(params, x, estimator, rng, state)
    return -neg, grads, obj
