from .layers import LatentSpec, LayerSpec, bernoulli_nll_np, log_mean_exp
from .sbn import SBN, sbn_loss
from .ssvae import (
    MODES,
    SSVAE,
    SSVAEConfig,
    component_costs,
    predicted_speedup,
    ssvae_labeled_bound,
    ssvae_objective,
    ssvae_unlabeled_bound,
    step_cost_model,
)
from .vae import VAE, vae_elbo

__all__ = [
    "LatentSpec",
    "LayerSpec",
    "MODES",
    "SBN",
    "SSVAE",
    "SSVAEConfig",
    "VAE",
    "bernoulli_nll_np",
    "component_costs",
    "log_mean_exp",
    "predicted_speedup",
    "sbn_loss",
    "ssvae_labeled_bound",
    "ssvae_objective",
    "ssvae_unlabeled_bound",
    "step_cost_model",
    "vae_elbo",
]
