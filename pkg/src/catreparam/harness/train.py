"""Training loops for the three experiments, one grid cell at a time.

Each cell draws every random number from streams keyed by
``(master seed, stream)``; cells of the same grid share initial weights,
minibatch order and evaluation noise, so they differ only in their
hyperparameters. Wall-clock timings are kept apart from the metrics, which
are bit-for-bit reproducible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from ..data import Splits, binarize_dynamic, binarize_fixed, load_dataset, one_hot, split_halves
from ..distributions import AnnealSchedule, anneal_temperature
from ..estimators import BERNOULLI, CATEGORICAL, get_estimator, slope_schedule
from ..graph import GraphError, NonFiniteGradient, sgd_momentum_step
from ..models import SBN, SSVAE, VAE, LatentSpec, SSVAEConfig
from ..seeding import STREAM_DATA, STREAM_EVAL, STREAM_INIT, STREAM_TRAIN, make_rng
from .config import Cell, ExperimentConfig

SPLITS = ("train", "valid", "test")


@dataclass
class RunRecord:
    config_hash: str
    seed: int
    cell: Cell
    rows: list = field(default_factory=list)  # (step, split, metric, value)
    timings: list = field(default_factory=list)  # (step, wall_clock, steps_per_sec)
    failed: bool = False
    error: Optional[str] = None
    params: Optional[dict] = None

    def log(self, step: int, split: str, metric: str, value: float) -> None:
        if self.rows and step < self.rows[-1][0]:
            raise ValueError("metrics must be logged in step order")
        self.rows.append((int(step), split, metric, float(value)))

    def metric(self, split: str, metric: str) -> list[tuple[int, float]]:
        return [(s, v) for s, sp, m, v in self.rows if sp == split and m == metric]

    def final(self, split: str, metric: str) -> float:
        values = self.metric(split, metric)
        return values[-1][1] if values else float("nan")

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "cell": self.cell.label(),
            "failed": self.failed,
            "error": self.error,
            "rows": [list(r) for r in self.rows],
            "timings": [list(t) for t in self.timings],
        }


def objective_metric(task: str) -> str:
    return {"sbn": "nll", "vae": "neg_bound", "ssvae": "error"}[task]


def temperature(config: ExperimentConfig, cell: Cell, step: int) -> float:
    if cell.anneal_rate is None:
        return config.tau
    return anneal_temperature(step, AnnealSchedule(cell.anneal_rate, config.tau_floor, cell.anneal_every))


def latent_spec(config: ExperimentConfig) -> LatentSpec:
    if config.latent == BERNOULLI:
        return LatentSpec(BERNOULLI, units=config.scaled_units)
    return LatentSpec(CATEGORICAL, groups=config.scaled_groups, k=config.k)


def prepare_data(config: ExperimentConfig) -> Splits:
    return load_dataset(config.dataset, seed=0, mnist_dir=config.mnist_dir, size=config.image_size)


class _Task:
    """Per-task glue: model, batch sampling, one optimization step, eval."""

    def __init__(self, config: ExperimentConfig, cell: Cell, splits: Splits, seed: int):
        self.config, self.cell, self.seed = config, cell, seed

    def estimator(self, step):
        cfg = self.config
        est = get_estimator(cfg.estimator)
        if cfg.estimator in ("gs", "st_gs"):
            est = replace(est, tau=temperature(cfg, self.cell, step))
        if cfg.estimator == "st_slope":
            est = replace(est, slope=slope_schedule(step, cfg.slope_rate, cfg.slope_max))
        return est


class _SBNTask(_Task):
    def __init__(self, config, cell, splits, seed):
        super().__init__(config, cell, splits, seed)
        self.data = {}
        for name in SPLITS:
            upper, lower = split_halves(binarize_fixed(getattr(splits, name)))
            self.data[name] = (upper.flat(), lower.flat())
        xu, xl = self.data["train"]
        self.model = SBN(xu.shape[1], xl.shape[1], latent_spec(config))

    def n_train(self):
        return len(self.data["train"][0])

    def step(self, params, idx, rng, state, step):
        xu, xl = self.data["train"]
        loss, grads, obj = self.model.loss(params, xu[idx], xl[idx], self.estimator(step), rng, state)
        return loss, grads, obj.state

    def evaluate(self, params, split, rng):
        xu, xl = self.data[split]
        n = min(len(xu), self.config.eval_subset)
        return {"nll": float(self.model.eval_nll(params, xu[:n], xl[:n], self.config.eval_m, rng).mean())}


class _VAETask(_Task):
    def __init__(self, config, cell, splits, seed):
        super().__init__(config, cell, splits, seed)
        self.data = {name: binarize_fixed(getattr(splits, name)).flat() for name in SPLITS}
        self.model = VAE(self.data["train"].shape[1], latent_spec(config), config.scaled_hidden, config.learn_tau)

    def n_train(self):
        return len(self.data["train"])

    def step(self, params, idx, rng, state, step):
        est = self.estimator(step)
        loss, grads, obj = self.model.loss(params, self.data["train"][idx], est, rng, state)
        return loss, grads, obj.state

    def evaluate(self, params, split, rng):
        x = self.data[split][: self.config.eval_subset]
        return {"neg_bound": float(self.model.eval_bound(params, x, self.config.eval_m, rng).mean())}


class _SSVAETask(_Task):
    def __init__(self, config, cell, splits, seed):
        super().__init__(config, cell, splits, seed)
        train = splits.train
        k = 10
        per_class = max(1, config.n_labeled // k)
        labeled = np.concatenate([np.flatnonzero(train.labels == c)[:per_class] for c in range(k)])
        self.xl = binarize_fixed(train.subset(labeled)).flat()
        self.yl = one_hot(train.labels[labeled], k)
        self.unlabeled = train.subset(np.setdiff1d(np.arange(len(train)), labeled))
        self.eval_data = {s: (getattr(splits, s).flat(), getattr(splits, s).labels) for s in ("valid", "test")}
        self.eval_data["train"] = (self.xl, train.labels[labeled])
        alpha = cell.alpha if cell.alpha is not None else config.alpha_grid[0]
        cfg = SSVAEConfig(k=k, style_dim=config.style_dim, alpha=alpha, mode=config.ssvae_mode)
        self.model = SSVAE(self.xl.shape[1], cfg, hidden=config.scaled_hidden or 64)

    def n_train(self):
        return len(self.unlabeled)

    def step(self, params, idx, rng, state, step):
        xu = binarize_dynamic(self.unlabeled.subset(idx), rng).flat()
        lab = rng.choice(len(self.xl), size=min(self.config.labeled_batch, len(self.xl)), replace=False)
        tau = temperature(self.config, self.cell, step)
        loss, grads = self.model.loss(params, self.xl[lab], self.yl[lab], xu, rng, tau=tau)
        return loss, grads, state

    def evaluate(self, params, split, rng):
        x, labels = self.eval_data[split]
        return {"error": self.model.error_rate(params, binarize_fixed_array(x), labels)}


def binarize_fixed_array(x: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    return (x >= threshold).astype(np.float64)


TASK_TYPES = {"sbn": _SBNTask, "vae": _VAETask, "ssvae": _SSVAETask}


def train_cell(config: ExperimentConfig, cell: Cell, seed: int, splits: Optional[Splits] = None, keep_params: bool = False) -> RunRecord:
    """Train one grid cell and log ``train/valid/test`` metrics every
    ``eval_every`` steps and at the end.

    A non-finite loss or gradient stops the cell and marks it failed.
    """
    if config.task not in TASK_TYPES:
        raise ValueError(f"task {config.task!r} is not a training task")
    splits = prepare_data(config) if splits is None else splits
    task = TASK_TYPES[config.task](config, cell, splits, seed)
    record = RunRecord(config.config_hash(), seed, cell)

    params = task.model.init_params(make_rng(seed, 0, STREAM_INIT))
    data_rng = make_rng(seed, 0, STREAM_DATA)
    train_rng = make_rng(seed, 0, STREAM_TRAIN)
    velocity, state = {}, None
    n = task.n_train()
    batch = min(config.batch_size, n)
    order, cursor = data_rng.permutation(n), 0
    running, count = 0.0, 0
    start = last_time = time.perf_counter()
    last_step = 0
    eval_points = set(range(config.eval_every, config.steps + 1, config.eval_every)) | {config.steps}
    metric = objective_metric(config.task)

    for step in range(1, config.steps + 1):
        if cursor + batch > n:
            order, cursor = data_rng.permutation(n), 0
        idx = order[cursor : cursor + batch]
        cursor += batch
        try:
            loss, grads, state = task.step(params, idx, train_rng, state, step - 1)
            if not np.isfinite(loss):
                raise NonFiniteGradient(f"non-finite loss at step {step}")
            params, velocity = sgd_momentum_step(params, grads, cell.lr, velocity, config.momentum)
        except (GraphError, FloatingPointError) as err:
            record.failed, record.error = True, f"{type(err).__name__}: {err}"
            break
        running += loss
        count += 1
        if step in eval_points:
            record.log(step, "train", "loss", running / count)
            running, count = 0.0, 0
            record.log(step, "train", "tau", temperature(config, cell, step))
            for split in ("valid", "test"):
                # identical evaluation noise for every cell at a given step
                eval_rng = make_rng(seed, step, STREAM_EVAL)
                for name, value in task.evaluate(params, split, eval_rng).items():
                    record.log(step, split, name, value)
            now = time.perf_counter()
            record.timings.append((step, now - start, (step - last_step) / max(now - last_time, 1e-12)))
            last_time, last_step = now, step
    if record.failed:
        record.log(max(last_step, 0), "valid", metric, float("nan"))
    if keep_params:
        record.params = params
    return record
