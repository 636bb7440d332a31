"""Experiment configuration: a JSON-serializable dataclass.

Schema (all keys optional, defaults below)::

    {"task": "sbn", "estimator": "gs", "latent": "categorical",
     "groups": 20, "k": 10, "units": 200, "hidden": 0, "scale": 0.25,
     "lr_grid": [...], "anneal_rates": [...], "anneal_every": [...],
     "alpha_grid": [...], "seeds": [0], "steps": 5000, ...}

Widths (``groups``, ``units``, ``hidden``) are full-size values; ``scale``
shrinks them for desk-scale runs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

from ..estimators import NAMES

TASKS = ("sbn", "vae", "ssvae", "audit", "density", "speed")

LR_GRID = (3e-5, 1e-5, 3e-4, 1e-4, 3e-3, 1e-3)
ANNEAL_RATES = (1e-5, 1e-4)
ANNEAL_EVERY = (500, 1000)
ALPHA_GRID = (0.1, 0.2, 0.3, 0.8, 1.0)
# 8x8 inputs and 5k steps barely move the weights at the full-size rates
DESK_LR_GRID = (1e-2, 3e-2, 1e-1)
SPEED_K = (1, 2, 5, 10, 20, 50, 100)
TEMPERATURE_ESTIMATORS = ("gs", "st_gs")

# seeds and output locations do not change what a cell computes
_HASH_EXCLUDE = ("seeds", "mnist_dir", "workers")


@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "sbn"
    estimator: str = "gs"
    latent: str = "categorical"
    groups: int = 20
    k: int = 10
    units: int = 200
    hidden: int = 0
    scale: float = 0.25
    lr_grid: tuple = LR_GRID
    momentum: float = 0.9
    batch_size: int = 100
    steps: int = 5000
    seeds: tuple = (0,)
    # temperature: fixed ``tau`` unless anneal grids are non-empty
    tau: float = 1.0
    anneal_rates: tuple = ()
    anneal_every: tuple = ()
    tau_floor: float = 0.5
    learn_tau: bool = False
    slope_rate: float = 1e-3
    slope_max: float = 5.0
    eval_every: int = 1000
    eval_m: int = 1000
    eval_subset: int = 100
    dataset: str = "digits"
    image_size: int = 8
    mnist_dir: Optional[str] = None
    # semi-supervised
    alpha_grid: tuple = ALPHA_GRID
    ssvae_mode: str = "gumbel"
    style_dim: int = 16
    n_labeled: int = 100
    labeled_batch: int = 10
    # speed benchmark
    speed_k: tuple = SPEED_K
    speed_x_dim: int = 784
    speed_hidden: int = 128
    speed_batch: int = 50
    speed_steps: int = 30
    speed_warmup: int = 3
    # audits
    audit_trials: int = 100_000
    workers: int = 1

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.task in ("sbn", "vae") and self.estimator not in NAMES:
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.steps <= 0:
            raise ValueError("steps must be positive")
        if not self.lr_grid or not self.seeds:
            raise ValueError("learning-rate grid and seeds must be non-empty")
        if self.task == "ssvae" and not self.alpha_grid:
            raise ValueError("alpha grid must be non-empty")
        if bool(self.anneal_rates) != bool(self.anneal_every):
            raise ValueError("anneal_rates and anneal_every must both be set or both empty")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        for name in ("lr_grid", "seeds", "anneal_rates", "anneal_every", "alpha_grid", "speed_k"):
            object.__setattr__(self, name, tuple(getattr(self, name)))

    # -- scaled sizes ----------------------------------------------------

    def _scaled(self, n: int) -> int:
        return max(1, int(round(n * self.scale)))

    @property
    def scaled_groups(self) -> int:
        return self._scaled(self.groups)

    @property
    def scaled_units(self) -> int:
        return self._scaled(self.units)

    @property
    def scaled_hidden(self) -> int:
        return self._scaled(self.hidden) if self.hidden else 0

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def config_hash(self) -> str:
        """Digest of everything that affects a cell except its seed."""
        data = {k: v for k, v in self.to_dict().items() if k not in _HASH_EXCLUDE}
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def override(self, **changes) -> "ExperimentConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


@dataclass(frozen=True)
class Cell:
    """One point of the hyperparameter grid."""

    lr: float
    anneal_rate: Optional[float] = None
    anneal_every: Optional[int] = None
    alpha: Optional[float] = None

    def label(self) -> str:
        parts = [f"lr={self.lr:g}"]
        if self.anneal_rate is not None:
            parts.append(f"r={self.anneal_rate:g}")
            parts.append(f"N={self.anneal_every}")
        if self.alpha is not None:
            parts.append(f"alpha={self.alpha:g}")
        return ",".join(parts)


def grid_cells(config: ExperimentConfig) -> list[Cell]:
    anneal = [(r, n) for r in config.anneal_rates for n in config.anneal_every]
    if not anneal or (config.task in ("sbn", "vae") and config.estimator not in TEMPERATURE_ESTIMATORS):
        anneal = [(None, None)]
    alphas = list(config.alpha_grid) if config.task == "ssvae" else [None]
    return [Cell(lr, r, n, a) for lr in config.lr_grid for r, n in anneal for a in alphas]


def desk_config(task: str, **overrides) -> ExperimentConfig:
    """Desk-scale defaults for the three experiments."""
    base = {
        "sbn": dict(task="sbn", estimator="gs", tau=1.0, lr_grid=DESK_LR_GRID),
        "vae": dict(task="vae", estimator="gs", hidden=256, lr_grid=DESK_LR_GRID, anneal_rates=ANNEAL_RATES, anneal_every=ANNEAL_EVERY),
        "ssvae": dict(task="ssvae", hidden=256, anneal_rates=(3e-5,), anneal_every=(2000,)),
    }.get(task, dict(task=task))
    base.update(overrides)
    return ExperimentConfig(**base)

