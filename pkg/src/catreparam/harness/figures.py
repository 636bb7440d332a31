"""Plot-ready tables: relaxed-sample densities and sample means per temperature."""

from __future__ import annotations

import numpy as np

from .. import distributions as D

DENSITY_COLUMNS = ("tau", "y1", "y2", "y3", "density")
MEAN_COLUMNS = ("tau", "mean1", "mean2", "mean3")


def simplex_grid(k: int, resolution: int) -> np.ndarray:
    """Interior grid points of the (k-1)-simplex, ``k`` in {2, 3}."""
    if k == 2:
        y1 = (np.arange(resolution) + 0.5) / resolution
        return np.stack([y1, 1.0 - y1], axis=1)
    if k == 3:
        pts = [(i, j) for i in range(1, resolution) for j in range(1, resolution - i)]
        a = np.asarray(pts, dtype=np.float64) / resolution
        return np.column_stack([a, 1.0 - a.sum(axis=1)])
    raise ValueError("density figures support k = 2 or 3")


def emit_density_figure_data(k: int, taus, probs, rng, resolution: int = 50, n_samples: int = 100_000):
    """Return ``(density_rows, mean_rows)``.

    ``density_rows`` has one row per grid point and temperature (``y3`` is
    NaN when ``k == 2``); ``mean_rows`` has the relaxed-sample mean for each
    temperature.
    """
    params = D.CategoricalParams.from_probs(np.asarray(probs, dtype=np.float64))
    if params.k != k:
        raise ValueError(f"expected {k} probabilities, got {params.k}")
    grid = simplex_grid(k, resolution)
    density_rows, mean_rows = [], []
    pad = [np.nan] * (3 - k)
    for tau in taus:
        dens = np.exp(D.gumbel_softmax_log_density(grid, params, tau))
        for y, d in zip(grid, dens):
            density_rows.append((float(tau), *map(float, y), *pad, float(d)))
        samples = D.gumbel_softmax_sample(params, tau, gumbel=D.sample_gumbel((n_samples, k), rng))
        mean_rows.append((float(tau), *map(float, samples.mean(axis=0)), *pad))
    return density_rows, mean_rows
