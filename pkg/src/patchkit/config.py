"""Flat key=value run configuration covering every knob of the pipeline.

A config file contains ``key = value`` lines (``#`` comments allowed)
whose keys match the RunConfig field names exactly; unknown keys are
rejected. Every command logs the fully resolved configuration and stamps
its short hash into all output files so runs can be reproduced from
(config, seed) alone.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path
from typing import get_type_hints

from .cavity import CavityConfig, FrequencyGrid, Substrate
from .curve_search import SearchConfig
from .curve_vae import CurveVaeArch, VaeTrainConfig
from .data import SamplingBounds
from .design_cvae import CvaeArch, CvaeTrainConfig
from .pipeline import PenaltyConfig
from .scoring import ScoringConfig, SurrogateTrainConfig

__all__ = ["RunConfig"]


@dataclass
class RunConfig:
    seed: int = 0
    jobs: int = 1

    substrate_eps_r: float = 3.68
    substrate_h_mm: float = 1.61

    grid_f_min_ghz: float = 1.0
    grid_f_max_ghz: float = 10.0
    grid_n: int = 1000

    cavity_modes: int = 3
    cavity_z0_ohm: float = 50.0
    cavity_q_fix: float | None = None
    cavity_probe_reactance: bool = True
    cavity_probe_inductance_nh: float = 0.2

    dataset_l_min: float = 7.5
    dataset_l_max: float = 52.5
    dataset_wl_min: float = 0.8
    dataset_wl_max: float = 2.0
    dataset_p_min: float = -6.0
    dataset_counts_l: int = 8
    dataset_counts_w: int = 8
    dataset_counts_p: int = 8
    dataset_target_total: int = 1292
    dataset_val_fraction: float = 0.1

    vae_epochs: int = 250
    vae_batch: int = 32
    vae_lr: float = 1e-3
    vae_kld_weight: float = 0.016
    vae_anneal_epochs: int = 100
    vae_latent: int = 64
    vae_enc_channels: tuple[int, ...] = (16, 32, 64, 64, 128)
    vae_dec_channels: tuple[int, ...] = (64, 32, 16)
    vae_dec_base_len: int = 16
    vae_kernel: int = 7
    vae_stride: int = 2
    vae_dropout: float = 0.1

    cvae_epochs: int = 300
    cvae_batch: int = 32
    cvae_lr: float = 1e-3
    cvae_kld_weight: float = 0.016
    cvae_anneal_epochs: int = 50
    cvae_eta: float = 0.1
    cvae_latent: int = 16
    cvae_enc_hidden: tuple[int, ...] = (64, 64)
    cvae_dec_hidden: tuple[int, ...] = (128, 128, 64, 32)
    cvae_embed_dim: int = 64
    cvae_predictor_updates: int = 1
    cvae_freeze_embedder: bool = False
    cvae_init_embedder_from_stage1: bool = True
    cvae_init_predictor_from_stage1: bool = True
    cvae_encoder_conditions_on_curve: bool = False

    surrogate_epochs: int = 500
    surrogate_batch: int = 64
    surrogate_lr: float = 5e-3
    surrogate_beta: float = 0.5

    search_alpha: float = 0.05
    search_iters: int = 200
    search_lambda_reg: float = 1e-3
    search_band_factor: float = 1.0

    penalty_step: float = 0.05
    penalty_iters: int = 200
    penalty_tol: float = 1e-10

    scoring_hinge_enabled: bool = False
    scoring_hinge_threshold_db: float = -3.0

    audit_epochs: int = 150

    # -- parsing / rendering

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict | None = None) -> "RunConfig":
        config = cls()
        hints = get_type_hints(cls)
        if path is not None:
            for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
                key, value = (part.strip() for part in line.split("=", 1))
                if key not in hints:
                    raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
                setattr(config, key, _parse(value, hints[key], key))
        for key, value in (overrides or {}).items():
            if key not in hints:
                raise ValueError(f"unknown config key {key!r}")
            setattr(config, key, value)
        return config

    def resolved_text(self) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: f.name):
            lines.append(f"{f.name} = {_render(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.resolved_text().encode()).hexdigest()[:12]

    # -- typed builders

    def substrate(self) -> Substrate:
        return Substrate(eps_r=self.substrate_eps_r, h=self.substrate_h_mm)

    def grid(self) -> FrequencyGrid:
        return FrequencyGrid(f_min=self.grid_f_min_ghz, f_max=self.grid_f_max_ghz, n=self.grid_n)

    def cavity_config(self) -> CavityConfig:
        return CavityConfig(
            modes=self.cavity_modes,
            z0=self.cavity_z0_ohm,
            q_fix=self.cavity_q_fix,
            probe_reactance=self.cavity_probe_reactance,
            probe_inductance_nh=self.cavity_probe_inductance_nh,
        )

    def sampling_bounds(self) -> SamplingBounds:
        return SamplingBounds(
            l_min=self.dataset_l_min,
            l_max=self.dataset_l_max,
            wl_min=self.dataset_wl_min,
            wl_max=self.dataset_wl_max,
            p_min=self.dataset_p_min,
        )

    def vae_arch(self) -> CurveVaeArch:
        return CurveVaeArch(
            n_points=self.grid_n,
            latent=self.vae_latent,
            enc_channels=self.vae_enc_channels,
            kernel=self.vae_kernel,
            stride=self.vae_stride,
            dec_base_len=self.vae_dec_base_len,
            dec_channels=self.vae_dec_channels,
            dropout=self.vae_dropout,
        )

    def vae_train_config(self) -> VaeTrainConfig:
        return VaeTrainConfig(
            epochs=self.vae_epochs,
            batch=self.vae_batch,
            lr=self.vae_lr,
            kld_weight=self.vae_kld_weight,
            anneal_epochs=self.vae_anneal_epochs,
            seed=self.seed,
        )

    def cvae_arch(self) -> CvaeArch:
        return CvaeArch(
            latent=self.cvae_latent,
            enc_hidden=self.cvae_enc_hidden,
            dec_hidden=self.cvae_dec_hidden,
            embed_dim=self.cvae_embed_dim,
            encoder_conditions_on_curve=self.cvae_encoder_conditions_on_curve,
        )

    def cvae_train_config(self) -> CvaeTrainConfig:
        return CvaeTrainConfig(
            epochs=self.cvae_epochs,
            batch=self.cvae_batch,
            lr=self.cvae_lr,
            kld_weight=self.cvae_kld_weight,
            anneal_epochs=self.cvae_anneal_epochs,
            eta=self.cvae_eta,
            predictor_updates=self.cvae_predictor_updates,
            freeze_embedder=self.cvae_freeze_embedder,
            init_embedder_from_stage1=self.cvae_init_embedder_from_stage1,
            init_predictor_from_stage1=self.cvae_init_predictor_from_stage1,
            seed=self.seed,
        )

    def surrogate_train_config(self) -> SurrogateTrainConfig:
        return SurrogateTrainConfig(
            epochs=self.surrogate_epochs,
            batch=self.surrogate_batch,
            lr=self.surrogate_lr,
            beta=self.surrogate_beta,
            seed=self.seed,
        )

    def search_config(self, init: str = "random") -> SearchConfig:
        return SearchConfig(
            alpha=self.search_alpha,
            iters=self.search_iters,
            lambda_reg=self.search_lambda_reg,
            init=init,
            seed=self.seed,
        )

    def penalty_config(self) -> PenaltyConfig:
        return PenaltyConfig(step=self.penalty_step, iters=self.penalty_iters, tol=self.penalty_tol)

    def scoring_config(self) -> ScoringConfig:
        return ScoringConfig(
            hinge_enabled=self.scoring_hinge_enabled,
            hinge_threshold_db=self.scoring_hinge_threshold_db,
        )


def _parse(text: str, hint, key: str):
    text = text.strip()
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    if hint is bool:
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"config key {key!r}: expected a boolean, got {text!r}")
    if hint == float | None:
        return None if text.lower() == "none" else float(text)
    if hint == tuple[int, ...]:
        return tuple(int(part) for part in text.split(",") if part.strip())
    raise ValueError(f"config key {key!r} has unsupported type {hint}")


def _render(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)
