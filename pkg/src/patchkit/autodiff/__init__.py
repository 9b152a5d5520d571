"""Minimal reverse-mode autodiff core: tensors, layers, losses, Adam."""

from . import tensor as ops
from .checkpoint import load_checkpoint, save_checkpoint
from .layers import (
    BatchNorm1d,
    Conv1d,
    ConvTranspose1d,
    Dense,
    Dropout,
    GELU,
    LeakyReLU,
    Module,
    ReLU,
    Sequential,
)
from .losses import beta_nll, kld_gauss, masked_mse, mse, reparam_sample
from .optim import Adam, AdamState, adam_step
from .tensor import Tensor, backward

__all__ = [
    "Adam",
    "AdamState",
    "BatchNorm1d",
    "Conv1d",
    "ConvTranspose1d",
    "Dense",
    "Dropout",
    "GELU",
    "LeakyReLU",
    "Module",
    "ReLU",
    "Sequential",
    "Tensor",
    "adam_step",
    "backward",
    "beta_nll",
    "kld_gauss",
    "load_checkpoint",
    "masked_mse",
    "mse",
    "ops",
    "reparam_sample",
    "save_checkpoint",
]
