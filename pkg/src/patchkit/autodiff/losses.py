"""Loss functions and the reparameterization sampler."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor, as_tensor

__all__ = ["beta_nll", "kld_gauss", "masked_mse", "mse", "reparam_sample"]

VAR_FLOOR = 1e-6


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error over all elements."""
    diff = pred - as_tensor(target)
    return T.mean(diff * diff)


def masked_mse(pred: Tensor, target, mask: np.ndarray) -> Tensor:
    """Squared error averaged over the unit-weight entries of ``mask``.

    ``mask`` broadcasts against ``pred``; entries with zero weight do not
    contribute. The effective count is the broadcast sum of the mask.
    """
    mask = np.asarray(mask, dtype=np.float64)
    total = float(np.broadcast_to(mask, pred.shape).sum())
    if total <= 0.0:
        raise ValueError("mask selects no entries")
    diff = pred - as_tensor(target)
    return T.sum_(diff * diff * Tensor(mask)) * (1.0 / total)


def kld_gauss(mu: Tensor, logvar: Tensor) -> Tensor:
    """KL divergence of N(mu, exp(logvar)) from N(0, I).

    Sums over latent dimensions; for batched (B, D) inputs the batch
    dimension is averaged.
    """
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    if mu.shape != logvar.shape:
        raise ValueError(f"shape mismatch: mu {mu.shape} vs logvar {logvar.shape}")
    per_element = T.exp(logvar) + mu * mu - 1.0 - logvar
    total = T.sum_(per_element) * 0.5
    if mu.data.ndim == 2:
        total = total * (1.0 / mu.shape[0])
    return total


def beta_nll(mu: Tensor, var: Tensor, target, beta: float) -> Tensor:
    """Heteroscedastic Gaussian NLL with gradient-stopped variance weighting.

    mean over elements of detach(var)^beta * (log(var)/2 + (target-mu)^2/(2 var)).
    """
    mu, var = as_tensor(mu), as_tensor(var)
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    if np.any(var.data <= 0.0):
        raise ValueError("variance must be strictly positive")
    weight = Tensor(var.data**beta)  # detached: carries no gradient
    diff = as_tensor(target) - mu
    nll = T.log(var) * 0.5 + diff * diff / (var * 2.0)
    return T.mean(weight * nll)


def reparam_sample(mu: Tensor, logvar: Tensor, rng: int | np.random.Generator) -> Tensor:
    """mu + exp(logvar/2) * eps with eps drawn from the seeded generator.

    Gradients flow to both ``mu`` and ``logvar``; eps is a constant.
    """
    mu, logvar = as_tensor(mu), as_tensor(logvar)
    if mu.shape != logvar.shape:
        raise ValueError(f"shape mismatch: mu {mu.shape} vs logvar {logvar.shape}")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    eps = rng.standard_normal(mu.shape)
    return mu + T.exp(logvar * 0.5) * Tensor(eps)
