"""Property suites run by the CLI: estimator audits and gradient checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import distributions as D
from ..estimators import BERNOULLI, CATEGORICAL, DARN, NVIL, MuProp, ScoreFunction, get_estimator
from ..graph import Graph
from ..models import SBN, SSVAE, VAE, LatentSpec, SSVAEConfig
from ..oracle import (
    EnumerationTestbed,
    audit_estimator,
    bernoulli_polynomial_testbed,
    categorical_linear_testbed,
    cost_table_testbed,
    finite_difference,
)


def _unbiased_estimators():
    return {
        "sf": ScoreFunction(normalize=False),
        "sf_baseline": ScoreFunction(normalize=False, baseline=True),
        "nvil": NVIL(normalize=False),
        "muprop": MuProp(normalize=False),
    }


def audit_testbeds() -> list[EnumerationTestbed]:
    return [
        categorical_linear_testbed(),
        cost_table_testbed(CATEGORICAL, [0.5, -1.0, 0.2, 0.0], [3.0, -1.0, 0.5, 2.0], name="cat4_table"),
        bernoulli_polynomial_testbed(
            [0.4, -0.3, 0.8, -1.2, 0.1, 0.6, -0.5, 0.9],
            [1.0, -0.5, 0.8, 0.3, -1.0, 0.6, 0.2, -0.7],
            degree=3,
            offset=0.5,
            scale=0.5,
            name="bern8_cubic",
        ),
    ]


def constant_testbed() -> EnumerationTestbed:
    def cost(g, z):
        return g.constant(np.full(z.shape[0], 2.5))

    return EnumerationTestbed("cat3_constant", CATEGORICAL, np.array([0.2, -0.4, 0.9]), cost)


def cubic_darn_testbed() -> EnumerationTestbed:
    return bernoulli_polynomial_testbed([0.3], [1.0], degree=3, offset=0.0, scale=1.0, name="bern1_cubic")


@dataclass
class Check:
    name: str
    passed: bool
    detail: dict

    def to_dict(self):
        return {"name": self.name, "passed": bool(self.passed), **self.detail}


def run_audit_suite(n_trials: int = 100_000, seed: int = 0) -> list[Check]:
    """Unbiasedness of the score-function family on every testbed, DARN's
    bias on a cubic cost, and a zero-mean score function on a constant cost."""
    checks = []
    for tb in audit_testbeds():
        for name, est in _unbiased_estimators().items():
            audit = audit_estimator(est, tb, n_trials, seed=seed)
            checks.append(Check(f"{name}@{tb.name} unbiased", audit.unbiased, {"max_abs_z": audit.max_abs_z, "threshold": audit.threshold}))
    audit = audit_estimator(DARN(normalize=False), cubic_darn_testbed(), n_trials, seed=seed)
    checks.append(Check("darn@bern1_cubic biased", audit.biased, {"max_abs_z": audit.max_abs_z, "threshold": audit.threshold}))
    audit = audit_estimator(ScoreFunction(normalize=False), constant_testbed(), n_trials, seed=seed)
    checks.append(Check("sf@constant zero mean", audit.unbiased and np.allclose(audit.exact, 0.0), {"max_abs_z": audit.max_abs_z, "mean": audit.mean.tolist()}))
    return checks


# --------------------------------------------------------------------------
# gradient checks


def relative_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def check_params(params: dict, value_and_grads, h: float = 1e-6) -> float:
    """Worst relative error over every parameter tensor."""
    _, grads = value_and_grads(params)
    worst = 0.0
    for name, value in params.items():
        def f(t, name=name):
            return value_and_grads({**params, name: t})[0]

        worst = max(worst, relative_error(finite_difference(f, value, h), grads[name]))
    return worst


def _surrogate(model_forward, estimator, seed):
    def run(params):
        g = Graph()
        obj = estimator.objective(g, model_forward(params), np.random.default_rng(seed))
        return float(obj.loss.value), g.grads_by_name(g.backward(obj.loss))

    return run


def gradient_checks(seed: int = 0, tol: float = 1e-5) -> list[Check]:
    """Autodiff against central differences for tempered softmax, the
    relaxed-sample path with frozen noise, and each model at tiny widths."""
    rng = np.random.default_rng(seed)
    out = []

    logits0 = rng.normal(size=(3, 4))
    w = rng.normal(size=(3, 4))
    for tau in (0.5, 1.0, 2.0):
        def f(x, tau=tau):
            g = Graph()
            p = g.param(x, name="x")
            loss = (g.tempered_softmax(p, tau) * w).sum()
            return float(loss.value), g.grads_by_name(g.backward(loss))

        out.append(_grad_check(f"tempered_softmax tau={tau}", check_params({"x": logits0}, lambda q: f(q["x"])), tol))

    gumbel = D.sample_gumbel((3, 4), rng)
    for tau in (0.5, 1.0):
        def f(q, tau=tau):
            g = Graph()
            p = g.param(q["x"], name="x")
            y = D.gumbel_softmax_node(g, p, tau, gumbel=gumbel)
            loss = g.square(y - 0.25).sum()
            return float(loss.value), g.grads_by_name(g.backward(loss))

        out.append(_grad_check(f"gumbel_softmax path tau={tau}", check_params({"x": logits0}, f), tol))

    x = (rng.random((4, 6)) > 0.5).astype(np.float64)
    for kind in (CATEGORICAL, BERNOULLI):
        latent = LatentSpec(kind, groups=2, k=3, units=4)
        sbn = SBN(3, 3, latent)
        run = _surrogate(lambda q: sbn.forward(q, x[:, :3], x[:, 3:]), get_estimator("gs", tau=0.7), seed)
        out.append(_grad_check(f"sbn {kind} gs", check_params(sbn.init_params(rng), run), tol))
        vae = VAE(6, latent, hidden=5, learn_tau=True)
        run = _surrogate(lambda q: vae.forward(q, x), get_estimator("gs"), seed)
        out.append(_grad_check(f"vae {kind} gs learned tau", check_params(vae.init_params(rng), run), tol))

    yl = np.eye(3)[[0, 2]]
    for mode in ("marginalize", "gumbel"):
        model = SSVAE(6, SSVAEConfig(k=3, style_dim=2, alpha=0.5, mode=mode), hidden=4)

        def run(q, model=model):
            return model.loss(q, x[:2], yl, x[2:], np.random.default_rng(seed), tau=0.7)

        out.append(_grad_check(f"ssvae {mode}", check_params(model.init_params(rng), run), tol))
    return out


def _grad_check(name: str, rel: float, tol: float) -> Check:
    return Check(name, rel < tol, {"rel_error": rel, "tolerance": tol})
