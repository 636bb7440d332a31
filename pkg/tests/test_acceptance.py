"""Acceptance criteria 1 to 11.

Each test records one ``CRITERION n: PASS|FAIL ...`` line; the lines are
printed at the end of the pytest session (see conftest.py) and when this
module runs as a script.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import expit, logit
from scipy.stats import chisquare

from catreparam import distributions as D
from catreparam.estimators import ScoreFunction, get_estimator
from catreparam.harness.checks import gradient_checks, run_audit_suite
from catreparam.harness.config import ExperimentConfig, desk_config, grid_cells
from catreparam.harness.grid import run_grid
from catreparam.harness.speed import run_speed_benchmark, speed_ratios
from catreparam.harness.train import train_cell
from catreparam.models import SSVAE, SSVAEConfig, ssvae_unlabeled_bound
from catreparam.oracle import audit_estimator, categorical_linear_testbed, gumbel_softmax_density, simplex_quadrature

RESULTS: dict[int, str] = {}


def record(n: int, passed: bool, detail: str) -> None:
    RESULTS[n] = f"CRITERION {n}: {'PASS' if passed else 'FAIL'} {detail}"
    print(RESULTS[n])
    assert passed, RESULTS[n]


# 1 ------------------------------------------------------------------------------


def test_criterion_1_density_normalizes():
    start = time.perf_counter()
    cases = [(2, t, 1e-4) for t in (0.7, 1.0, 2.0)] + [(3, 1.0, 1e-3), (3, 2.0, 1e-3), (3, 0.7, 1e-2)]
    probs = {2: [0.3, 0.7], 3: [0.2, 0.3, 0.5]}
    worst = []
    ok = True
    for k, tau, tol in cases:
        params = D.CategoricalParams.from_probs(probs[k])
        total = simplex_quadrature(gumbel_softmax_density(params, tau), k, resolution=2000 if k == 2 else 400)
        err = abs(total - 1.0)
        ok &= err < tol
        worst.append(f"k={k},tau={tau}:{err:.1e}")
    secs = time.perf_counter() - start
    record(1, ok and secs < 10, f"|integral-1| {' '.join(worst)}; {secs:.1f}s")


# 2 ------------------------------------------------------------------------------


def test_criterion_2_sampler_matches_density():
    start = time.perf_counter()
    probs = np.array([0.3, 0.7])
    params = D.CategoricalParams.from_probs(probs)
    delta = math.log(probs[0] / probs[1])
    edges = np.linspace(0.0, 1.0, 51)
    rng = np.random.default_rng(2024)
    pvals, cross = [], 0.0
    for tau in (0.5, 1.0):
        y = D.gumbel_softmax_sample(params, tau, gumbel=D.sample_gumbel((100_000, 2), rng))
        counts = np.histogram(y[:, 0], bins=edges)[0]

        def dens(t):
            return math.exp(D.gumbel_softmax_log_density(np.array([t, 1.0 - t]), params, tau))

        expected = np.array([quad(dens, a, b, limit=200)[0] for a, b in zip(edges[:-1], edges[1:])])
        # independent cross-check through the logistic CDF of y1
        cdf = expit(tau * logit(np.clip(edges, 1e-300, 1 - 1e-16)) - delta)
        cdf[0], cdf[-1] = 0.0, 1.0
        cross = max(cross, float(np.max(np.abs(np.diff(cdf) - expected))))
        expected = expected / expected.sum()
        pvals.append(chisquare(counts, expected * counts.sum()).pvalue)
    secs = time.perf_counter() - start
    ok = min(pvals) > 0.01 and cross < 1e-8 and secs < 5
    record(2, ok, f"p-values {pvals[0]:.3f} (tau=0.5) {pvals[1]:.3f} (tau=1); cdf cross-check {cross:.1e}; {secs:.1f}s")


# 3 ------------------------------------------------------------------------------


def test_criterion_3_gumbel_moments():
    g = D.sample_gumbel(1_000_000, np.random.default_rng(3))
    mean, var = g.mean(), g.var()
    ok = abs(mean - 0.57722) < 0.01 and abs(var - 1.64493) < 0.02
    record(3, ok, f"mean {mean:.5f} var {var:.5f}")


# 4 ------------------------------------------------------------------------------


def test_criterion_4_gradient_fidelity():
    checks = gradient_checks(seed=0, tol=1e-5)
    worst = max(c.detail["rel_error"] for c in checks)
    record(4, all(c.passed for c in checks), f"{len(checks)} checks, worst relative error {worst:.1e}")


# 5 ------------------------------------------------------------------------------


def test_criterion_5_temperature_limits():
    probs = np.array([0.2, 0.3, 0.5])
    params = D.CategoricalParams.from_probs(probs)
    rng = np.random.default_rng(5)
    n = 100_000
    cold = D.gumbel_softmax_sample(params, 0.01, gumbel=D.sample_gumbel((n, 3), rng))
    sharp = float(np.mean(cold.max(axis=1) > 0.99))
    counts = np.bincount(cold.argmax(axis=1), minlength=3)
    p = chisquare(counts, probs * n).pvalue
    hot = D.gumbel_softmax_sample(params, 100.0, gumbel=D.sample_gumbel((n, 3), rng))
    dev = float(np.max(np.abs(hot.mean(axis=0) - 1 / 3)))
    # exact k=2 reference for the same event, from the logistic CDF of y1
    d = math.log(0.3 / 0.7)
    ref = 1.0 - (expit(0.01 * logit(0.99) - d) - expit(0.01 * logit(0.01) - d))
    ok = sharp >= 0.99 and p > 0.01 and dev < 0.02
    record(5, ok, f"tau=0.01: {sharp:.4f} of draws have max>0.99 (exact k=2 value at pi=(0.3,0.7): {ref:.4f}), argmax chi2 p={p:.3f}; tau=100: |mean-uniform|={dev:.4f}")


# 6 ------------------------------------------------------------------------------


def test_criterion_6_estimator_audits():
    start = time.perf_counter()
    checks = run_audit_suite(100_000, seed=0)
    secs = time.perf_counter() - start
    failed = [c.name for c in checks if not c.passed]
    record(6, not failed and secs < 60, f"{len(checks) - len(failed)}/{len(checks)} audits pass in {secs:.1f}s {failed or ''}")


# 7 ------------------------------------------------------------------------------


def test_criterion_7_variance_ordering():
    tb = categorical_linear_testbed()
    gs = audit_estimator(get_estimator("gs", tau=1.0), tb, 100_000, seed=7)
    sf = audit_estimator(ScoreFunction(normalize=False), tb, 100_000, seed=7)
    record(7, gs.total_variance < sf.total_variance, f"Var(gs)={gs.total_variance:.4f} Var(sf)={sf.total_variance:.4f}")


# 8 ------------------------------------------------------------------------------


def test_criterion_8_marginalization_consistency():
    rng = np.random.default_rng(8)
    model = SSVAE(6, SSVAEConfig(k=3, style_dim=2), hidden=5)
    params = model.init_params(rng)
    x = (rng.random((1, 6)) < 0.5).astype(float)
    eps = rng.standard_normal((1, 2))
    exact = ssvae_unlabeled_bound(x, params, model, "marginalize", eps)[0]
    n = 10_000
    draws = ssvae_unlabeled_bound(np.repeat(x, n, axis=0), params, model, "gumbel", np.repeat(eps, n, axis=0), tau=0.1, rng=rng, discretize=True)
    se = draws.std(ddof=1) / math.sqrt(n)
    z = (draws.mean() - exact) / se
    record(8, abs(z) < 3, f"exact {exact:.4f} sampled {draws.mean():.4f} z={z:.2f}")


# 9 ------------------------------------------------------------------------------


def test_criterion_9_speed_scaling():
    start = time.perf_counter()
    config = ExperimentConfig(task="speed")
    rows = run_speed_benchmark(config.speed_k, config, seed=0)
    ratios = speed_ratios(rows)
    secs = time.perf_counter() - start
    ks = (2, 5, 10, 20, 50, 100)
    monotone = all(ratios[a] <= ratios[b] for a, b in zip(ks, ks[1:]))
    ok = ratios[10] >= 1.5 and monotone and abs(ratios[1] - 1.0) <= 0.2 and secs < 300
    shown = " ".join(f"k={k}:{ratios[k]:.2f}" for k in sorted(ratios))
    record(9, ok, f"gumbel/marginalize steps-per-sec {shown}; {secs:.0f}s")


# 10 -----------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_10_directional_reproduction():
    start = time.perf_counter()
    wins, detail = {}, []
    for task in ("sbn", "vae"):
        wins[task] = 0
        for seed in range(3):
            test = {}
            for est in ("gs", "st"):
                # only the final evaluation feeds selection, so skip the intermediate ones
                config = desk_config(task, estimator=est, seeds=(seed,), eval_every=5000)
                test[est] = run_grid(config).selection.test
            wins[task] += test["gs"] <= test["st"]
            detail.append(f"{task}/s{seed} gs={test['gs']:.2f} st={test['st']:.2f}")
    secs = time.perf_counter() - start
    ok = wins["sbn"] >= 2 and wins["vae"] >= 2 and secs < 1800
    record(10, ok, f"gs<=st in {wins['sbn']}/3 sbn and {wins['vae']}/3 vae seeds; {'; '.join(detail)}; {secs / 60:.1f} min")


# 11 -----------------------------------------------------------------------------


def test_criterion_11_determinism():
    base = dict(steps=30, eval_every=10, eval_m=8, eval_subset=10, batch_size=20, lr_grid=(0.03,), anneal_rates=(), anneal_every=())
    configs = [
        desk_config("sbn", estimator="nvil", **base),
        desk_config("vae", estimator="gs", **base),
        desk_config("ssvae", alpha_grid=(0.1,), n_labeled=20, labeled_batch=4, style_dim=2, hidden=16, **base),
    ]
    same = []
    for config in configs:
        cell = grid_cells(config)[0]
        a = train_cell(config, cell, 11, keep_params=True)
        b = train_cell(config, cell, 11, keep_params=True)
        same.append(a.rows == b.rows and all(np.array_equal(a.params[k], b.params[k]) for k in a.params))
    record(11, all(same), f"repeat runs identical for sbn/vae/ssvae: {same}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-s"]))
