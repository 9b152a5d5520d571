"""Inverse design toolkit for coaxial-fed rectangular patch antennas.

Learns a latent model of reflection-response curves, searches that latent
space for realizable curves matching a notch target, conditionally
generates antenna geometries, and refines candidates with best-of-N
sampling, surrogate/oracle scoring, and manufacturability-penalty
optimization.
"""

from .cavity import (
    CavityConfig,
    DesignParams,
    FrequencyGrid,
    ResponseCurve,
    Substrate,
    feasible,
    resonant_freq_tm10,
    s11_curve,
)
from .curve_search import Notch, TargetSpec, build_mask, latent_search, lorentzian_target
from .curve_vae import ResponseVae, train_vae
from .design_cvae import DesignCvae, disentanglement_audit, train_cvae
from .pipeline import SearchBudget, TrainedModels, penalty, run_search
from .scoring import Surrogate, oracle_score, surrogate_score, train_surrogate

__version__ = "0.1.0"

__all__ = [
    "CavityConfig",
    "DesignCvae",
    "DesignParams",
    "FrequencyGrid",
    "Notch",
    "ResponseCurve",
    "ResponseVae",
    "SearchBudget",
    "Substrate",
    "Surrogate",
    "TargetSpec",
    "TrainedModels",
    "build_mask",
    "disentanglement_audit",
    "feasible",
    "latent_search",
    "lorentzian_target",
    "oracle_score",
    "penalty",
    "resonant_freq_tm10",
    "run_search",
    "s11_curve",
    "surrogate_score",
    "train_cvae",
    "train_surrogate",
    "train_vae",
    "__version__",
]
