"""Gumbel-Softmax sampling and gradient estimators for discrete latent variables."""

from . import data, distributions, estimators, graph, models, oracle
from .distributions import (
    AnnealSchedule,
    CategoricalParams,
    anneal_temperature,
    gumbel_max_sample,
    gumbel_softmax_log_density,
    gumbel_softmax_sample,
    sample_gumbel,
)
from .estimators import EstimatorInput, EstimatorOutput, get_estimator
from .graph import Graph, Node
from .seeding import make_rng

__version__ = "0.1.0"

__all__ = [
    "AnnealSchedule",
    "CategoricalParams",
    "EstimatorInput",
    "EstimatorOutput",
    "Graph",
    "Node",
    "anneal_temperature",
    "data",
    "distributions",
    "estimators",
    "get_estimator",
    "graph",
    "gumbel_max_sample",
    "gumbel_softmax_log_density",
    "gumbel_softmax_sample",
    "make_rng",
    "models",
    "oracle",
    "sample_gumbel",
]
