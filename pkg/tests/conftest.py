"""Shared fixtures: tiny datasets and small trained models for fast tests."""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from patchkit.cavity import CavityConfig, FrequencyGrid, Substrate
from patchkit.curve_vae import CurveVaeArch, ResponseVae, VaeTrainConfig, train_vae
from patchkit.data import SamplingBounds, build_dataset, grid_sample, split
from patchkit.design_cvae import CvaeArch, CvaeTrainConfig, train_cvae
from patchkit.pipeline import TrainedModels
from patchkit.scoring import SurrogateTrainConfig, train_surrogate


TINY_ARCH = CurveVaeArch(
    n_points=100,
    latent=8,
    enc_channels=(4, 8, 8),
    kernel=5,
    stride=2,
    dec_base_len=4,
    dec_channels=(8, 4),
)


@pytest.fixture(scope="session")
def substrate():
    return Substrate()


@pytest.fixture(scope="session")
def cavity_config():
    return CavityConfig()


@pytest.fixture(scope="session")
def tiny_grid():
    return FrequencyGrid(f_min=1.0, f_max=10.0, n=100)


@pytest.fixture(scope="session")
def tiny_records(substrate, cavity_config, tiny_grid):
    designs = grid_sample(SamplingBounds(), (4, 4, 4), seed=0)
    return build_dataset(designs, substrate, cavity_config, tiny_grid)


@pytest.fixture(scope="session")
def tiny_splits(tiny_records):
    return split(tiny_records, 0.2, seed=1)


@pytest.fixture(scope="session")
def tiny_vae(tiny_splits):
    train_recs, val_recs = tiny_splits
    config = VaeTrainConfig(epochs=30, batch=16, lr=2e-3, anneal_epochs=10, seed=0)
    model, history = train_vae(train_recs, val_recs, config, TINY_ARCH)
    return model, history


TINY_CVAE_ARCH = CvaeArch(
    latent=4,
    enc_hidden=(16, 16),
    dec_hidden=(32, 32, 16, 8),
    embed_dim=8,
    predictor_map_dim=8,
)


@pytest.fixture(scope="session")
def tiny_cvae(tiny_splits, tiny_vae):
    train_recs, val_recs = tiny_splits
    vae, _ = tiny_vae
    config = CvaeTrainConfig(epochs=40, batch=16, lr=2e-3, anneal_epochs=10, seed=0)
    model, history = train_cvae(train_recs, val_recs, vae, config, TINY_CVAE_ARCH)
    return model, history


@pytest.fixture(scope="session")
def tiny_surrogate(tiny_splits):
    train_recs, val_recs = tiny_splits
    config = SurrogateTrainConfig(epochs=60, batch=16, lr=3e-3, beta=0.5, seed=0)
    model, history = train_surrogate(train_recs, val_recs, config, TINY_ARCH)
    return model, history


@pytest.fixture(scope="session")
def tiny_models(tiny_vae, tiny_cvae, tiny_surrogate):
    return TrainedModels(vae=tiny_vae[0], cvae=tiny_cvae[0], surrogate=tiny_surrogate[0])
