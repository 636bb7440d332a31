"""Training-step throughput: summing over classes versus one relaxed sample."""

from __future__ import annotations

import gc
import time
from dataclasses import dataclass

import numpy as np

from ..data import binarize_fixed, one_hot, random_labels, synthetic_batch
from ..models import SSVAE, SSVAEConfig, component_costs, predicted_speedup
from ..seeding import STREAM_DATA, STREAM_INIT, STREAM_TRAIN, make_rng
from .config import ExperimentConfig

SPEED_MODES = ("marginalize", "gumbel")
SPEED_COLUMNS = ("k", "mode", "steps_per_sec", "median_step_sec", "ratio", "predicted_ratio")


@dataclass
class SpeedRow:
    k: int
    mode: str
    steps_per_sec: float
    median_step_sec: float
    ratio: float = float("nan")  # gumbel steps/sec over marginalize steps/sec
    predicted_ratio: float = float("nan")

    def as_tuple(self):
        return (self.k, self.mode, self.steps_per_sec, self.median_step_sec, self.ratio, self.predicted_ratio)


def time_steps(models: dict, params: dict, xl, yl, xu, rng, steps: int, warmup: int) -> dict:
    """Seconds per full forward/backward step for each mode.

    Modes alternate step by step so that drift in machine load hits them
    equally; warm-up steps are dropped. Each step's tape is collected
    before the next one starts, outside the timed region.
    """
    out = {mode: [] for mode in models}
    for i in range(warmup + steps):
        for mode, model in models.items():
            gc.collect()
            t0 = time.perf_counter()
            model.loss(params[mode], xl, yl, xu, rng, tau=1.0)
            if i >= warmup:
                out[mode].append(time.perf_counter() - t0)
    return {mode: np.asarray(v) for mode, v in out.items()}


def run_speed_benchmark(k_list, config: ExperimentConfig, seed: int = 0) -> list[SpeedRow]:
    """Median steps/sec per ``(k, mode)`` on synthetic 784-pixel images with
    random labels; inputs are large enough that network compute dominates."""
    side = int(round(np.sqrt(config.speed_x_dim)))
    data_rng = make_rng(seed, 0, STREAM_DATA)
    images = binarize_fixed(synthetic_batch("random_bernoulli", config.speed_batch + config.labeled_batch, data_rng, side, side))
    x = images.flat()
    xl, xu = x[: config.labeled_batch], x[config.labeled_batch :]
    rows = []
    for k in k_list:
        labels = random_labels(images, k, data_rng).labels[: config.labeled_batch]
        yl = one_hot(labels, k)
        models, params = {}, {}
        for mode in SPEED_MODES:
            cfg = SSVAEConfig(k=k, style_dim=config.style_dim, alpha=0.1, mode=mode, allow_single_class=True)
            models[mode] = SSVAE(x.shape[1], cfg, hidden=config.speed_hidden)
            params[mode] = models[mode].init_params(make_rng(seed, k, STREAM_INIT))
        secs = time_steps(models, params, xl, yl, xu, make_rng(seed, k, STREAM_TRAIN), config.speed_steps, config.speed_warmup)
        per_mode = {}
        for mode in SPEED_MODES:
            med = float(np.median(secs[mode]))
            per_mode[mode] = SpeedRow(k, mode, 1.0 / med, med)
        ratio = per_mode["gumbel"].steps_per_sec / per_mode["marginalize"].steps_per_sec
        costs = component_costs(x.shape[1], k, config.style_dim, config.speed_hidden)
        predicted = predicted_speedup(k, costs["D"], costs["I"], costs["G"])
        for row in per_mode.values():
            row.ratio, row.predicted_ratio = ratio, predicted
            rows.append(row)
    return rows


def speed_ratios(rows: list[SpeedRow]) -> dict[int, float]:
    return {r.k: r.ratio for r in rows if r.mode == "gumbel"}
