"""Conditional VAE mapping (design latent, response curve) to geometries.

The decoder sees the design latent concatenated with an embedding of the
conditioning curve. An adversarial predictor tries to reconstruct the
curve from the design latent alone; the encoder is rewarded for making
that fail, which forces curve information through the explicit
conditional pathway and leaves the latent free for everything else
(e.g. manufacturability refinement at test time).

The condition embedder reuses the Stage-1 encoder architecture and the
predictor reuses the Stage-1 decoder architecture (optionally their
trained weights as initialization).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import (
    Adam,
    Dense,
    GELU,
    LeakyReLU,
    Module,
    Sequential,
    Tensor,
    kld_gauss,
    load_checkpoint,
    mse,
    ops,
    reparam_sample,
    save_checkpoint,
)
from .autodiff.layers import frozen
from .cavity import DesignParams, ResponseCurve
from .curve_vae import (
    CurveDecoder,
    CurveEncoder,
    CurveScaler,
    CurveVaeArch,
    ResponseVae,
    TrainingDiverged,
    records_matrix,
)
from .data import DatasetRecord

__all__ = [
    "CvaeArch",
    "CvaeTrainConfig",
    "DesignCvae",
    "DesignScaler",
    "disentanglement_audit",
    "train_cvae",
]


@dataclass(frozen=True)
class CvaeArch:
    design_dim: int = 3
    latent: int = 16
    enc_hidden: tuple[int, ...] = (64, 64)
    dec_hidden: tuple[int, ...] = (128, 128, 64, 32)
    embed_dim: int = 64
    predictor_map_dim: int = 64
    leaky_slope: float = 0.01
    encoder_conditions_on_curve: bool = False


@dataclass(frozen=True)
class CvaeTrainConfig:
    epochs: int = 300
    batch: int = 32
    lr: float = 1e-3
    kld_weight: float = 0.016
    anneal_epochs: int = 50
    eta: float = 0.1  # disentanglement weight
    predictor_updates: int = 1
    freeze_embedder: bool = False
    init_embedder_from_stage1: bool = True
    init_predictor_from_stage1: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.eta < 0.0:
            raise ValueError("disentanglement weight must be >= 0")
        if self.predictor_updates < 1:
            raise ValueError("predictor update ratio must be >= 1")


@dataclass(frozen=True)
class DesignScaler:
    """Per-component affine normalization of (L, W, p) triples."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, designs: np.ndarray) -> "DesignScaler":
        return cls(mean=designs.mean(axis=0), std=designs.std(axis=0))

    def to_normalized(self, designs: np.ndarray) -> np.ndarray:
        return (designs - self.mean) / self.std

    def to_mm(self, normalized: np.ndarray) -> np.ndarray:
        return normalized * self.std + self.mean


class DesignCvae(Module):
    def __init__(
        self,
        arch: CvaeArch,
        vae_arch: CurveVaeArch,
        rng: np.random.Generator,
        design_scaler: DesignScaler | None = None,
        curve_scaler: CurveScaler | None = None,
    ):
        super().__init__("design_cvae")
        self.arch = arch
        self.vae_arch = vae_arch
        self.design_scaler = design_scaler
        self.curve_scaler = curve_scaler

        enc_in = arch.design_dim + (arch.embed_dim if arch.encoder_conditions_on_curve else 0)
        layers: list[Module] = []
        prev = enc_in
        for i, width in enumerate(arch.enc_hidden):
            layers.append(Dense(prev, width, rng, name=f"fc{i}"))
            layers.append(LeakyReLU(arch.leaky_slope, name=f"lrelu{i}"))
            prev = width
        self.design_encoder = self.register_module("design_encoder", Sequential(layers, "design_encoder"))
        self.mu_head = self.register_module("mu_head", Dense(prev, arch.latent, rng, name="mu_head"))
        self.logvar_head = self.register_module(
            "logvar_head", Dense(prev, arch.latent, rng, name="logvar_head")
        )

        self.embed_enc = self.register_module("embed_enc", CurveEncoder(vae_arch, rng, name="embed_enc"))
        self.embed_head = self.register_module(
            "embed_head", Dense(self.embed_enc.flat_dim, arch.embed_dim, rng, name="embed_head")
        )

        layers = []
        prev = arch.latent + arch.embed_dim
        for i, width in enumerate(arch.dec_hidden):
            layers.append(Dense(prev, width, rng, name=f"fc{i}"))
            layers.append(GELU(name=f"gelu{i}"))
            prev = width
        layers.append(Dense(prev, arch.design_dim, rng, name="out"))
        self.design_decoder = self.register_module("design_decoder", Sequential(layers, "design_decoder"))

        self.pred_map = self.register_module(
            "pred_map", Dense(arch.latent, arch.predictor_map_dim, rng, name="pred_map")
        )
        self.predictor = self.register_module(
            "predictor",
            CurveDecoder(vae_arch, rng, latent_in=arch.predictor_map_dim, out_channels=1, name="predictor"),
        )

    # -- module groups

    def generator_parameters(self) -> dict[str, Tensor]:
        groups = ["design_encoder", "mu_head", "logvar_head", "design_decoder", "embed_enc", "embed_head"]
        params = self.parameters()
        return {k: v for k, v in params.items() if k.split(".")[0] in groups}

    def predictor_parameters(self) -> dict[str, Tensor]:
        params = self.parameters()
        return {k: v for k, v in params.items() if k.split(".")[0] in ("pred_map", "predictor")}

    # -- graph-building paths

    def embed_tensor(self, y_norm: Tensor, rng=None) -> Tensor:
        return self.embed_head(self.embed_enc(y_norm, rng), rng)

    def encode_tensor(self, x_norm: Tensor, embed: Tensor | None = None, rng=None) -> tuple[Tensor, Tensor]:
        if self.arch.encoder_conditions_on_curve:
            if embed is None:
                raise ValueError("this encoder conditions on the curve embedding")
            x_norm = ops.concat([x_norm, embed], axis=1)
        h = self.design_encoder(x_norm, rng)
        return self.mu_head(h), self.logvar_head(h)

    def decode_tensor(self, z: Tensor, embed: Tensor, rng=None) -> Tensor:
        return self.design_decoder(ops.concat([z, embed], axis=1), rng)

    def predict_tensor(self, z: Tensor, rng=None) -> Tensor:
        out = self.predictor(self.pred_map(z, rng), rng)
        return ops.reshape(out, (z.shape[0], self.vae_arch.n_points))

    # -- frozen numpy conveniences

    def _scalers(self) -> tuple[DesignScaler, CurveScaler]:
        if self.design_scaler is None or self.curve_scaler is None:
            raise RuntimeError("model has no scalers; train or load a checkpoint first")
        return self.design_scaler, self.curve_scaler

    def embed_curves(self, curves_db: np.ndarray) -> np.ndarray:
        _, curve_scaler = self._scalers()
        was_training = self.training
        self.eval()
        out = self.embed_tensor(Tensor(curve_scaler.to_normalized(curves_db))).data
        self.train(was_training)
        return out

    def encode_designs(self, designs_mm: np.ndarray, curves_db: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        design_scaler, _ = self._scalers()
        was_training = self.training
        self.eval()
        embed = None
        if self.arch.encoder_conditions_on_curve:
            if curves_db is None:
                raise ValueError("this encoder conditions on curves")
            embed = Tensor(self.embed_curves(curves_db))
        mu, logvar = self.encode_tensor(Tensor(design_scaler.to_normalized(designs_mm)), embed)
        self.train(was_training)
        return mu.data, logvar.data

    def decode_designs(self, z: np.ndarray, curves_db: np.ndarray) -> np.ndarray:
        """Latents (B, latent) + dB curves (B, N) -> designs (B, 3) in mm."""
        design_scaler, curve_scaler = self._scalers()
        was_training = self.training
        self.eval()
        embed = self.embed_tensor(Tensor(curve_scaler.to_normalized(curves_db)))
        out = self.decode_tensor(Tensor(z), embed).data
        self.train(was_training)
        return design_scaler.to_mm(out)

    def decode_design(self, z: np.ndarray, curve: ResponseCurve | np.ndarray) -> DesignParams:
        values = curve.values if isinstance(curve, ResponseCurve) else np.asarray(curve)
        triple = self.decode_designs(np.asarray(z)[None, :], values[None, :])[0]
        return DesignParams(float(triple[0]), float(triple[1]), float(triple[2]))

    # -- persistence

    def save(self, path: str | Path, metadata: dict | None = None) -> None:
        design_scaler, curve_scaler = self._scalers()
        arrays = self.state_arrays()
        arrays["design_scaler.mean"] = design_scaler.mean
        arrays["design_scaler.std"] = design_scaler.std
        arrays["curve_scaler.mean"] = np.array([curve_scaler.mean])
        arrays["curve_scaler.std"] = np.array([curve_scaler.std])
        meta = dict(metadata or {})
        meta["kind"] = "design_cvae"
        meta["arch"] = asdict(self.arch)
        meta["vae_arch"] = asdict(self.vae_arch)
        save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path: str | Path) -> tuple["DesignCvae", dict]:
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "design_cvae":
            raise ValueError(f"{path}: not a design CVAE checkpoint")
        arch_fields = dict(meta["arch"])
        arch_fields["enc_hidden"] = tuple(arch_fields["enc_hidden"])
        arch_fields["dec_hidden"] = tuple(arch_fields["dec_hidden"])
        vae_fields = dict(meta["vae_arch"])
        vae_fields["enc_channels"] = tuple(vae_fields["enc_channels"])
        vae_fields["dec_channels"] = tuple(vae_fields["dec_channels"])
        model = cls(
            CvaeArch(**arch_fields),
            CurveVaeArch(**vae_fields),
            np.random.default_rng(0),
            DesignScaler(arrays["design_scaler.mean"], arrays["design_scaler.std"]),
            CurveScaler(float(arrays["curve_scaler.mean"][0]), float(arrays["curve_scaler.std"][0])),
        )
        model.load_state_arrays(arrays)
        model.eval()
        return model, meta


def _copy_prefixed(src: dict[str, np.ndarray], dst: Module, src_prefix: str, dst_prefix: str) -> None:
    """Copy arrays whose names match a prefix swap; shape mismatches are skipped."""
    state = dst.state_arrays()
    for name, value in src.items():
        if name.startswith(src_prefix):
            target = dst_prefix + name[len(src_prefix):]
            if target in state and state[target].shape == value.shape:
                state[target][...] = value


def train_cvae(
    train_records: list[DatasetRecord],
    val_records: list[DatasetRecord],
    stage1: ResponseVae,
    config: CvaeTrainConfig,
    arch: CvaeArch | None = None,
) -> tuple[DesignCvae, list[dict]]:
    """Alternating minimax training; best checkpoint by validation recon.

    Each iteration first updates the predictor to minimize its curve
    reconstruction error from the (detached) design latent, then updates
    encoder/decoder/embedder on reconstruction + annealed KLD - eta *
    predictor loss, with the predictor frozen.
    """
    if not train_records or not val_records:
        raise ValueError("train and validation splits must be nonempty")
    arch = arch or CvaeArch()
    rng = np.random.default_rng(config.seed)
    designs_train = np.stack([r.design.as_array() for r in train_records])
    design_scaler = DesignScaler.fit(designs_train)
    curve_scaler = stage1.scaler  # conditioning uses the Stage-1 normalization
    model = DesignCvae(arch, stage1.arch, rng, design_scaler, curve_scaler)

    stage1_arrays = stage1.state_arrays()
    if config.init_embedder_from_stage1:
        _copy_prefixed(stage1_arrays, model, "encoder.", "embed_enc.")
        _copy_prefixed(stage1_arrays, model, "mu_head.", "embed_head.")
    if config.init_predictor_from_stage1:
        _copy_prefixed(stage1_arrays, model, "decoder.", "predictor.")

    x_train = design_scaler.to_normalized(designs_train)
    y_train = curve_scaler.to_normalized(records_matrix(train_records))
    x_val = design_scaler.to_normalized(np.stack([r.design.as_array() for r in val_records]))
    y_val = curve_scaler.to_normalized(records_matrix(val_records))

    gen_params = model.generator_parameters()
    if config.freeze_embedder:
        gen_params = {
            k: v for k, v in gen_params.items() if not k.startswith(("embed_enc.", "embed_head."))
        }
    opt_gen = Adam(gen_params, lr=config.lr)
    opt_pred = Adam(model.predictor_parameters(), lr=config.lr)
    history: list[dict] = []
    best: tuple[float, dict[str, np.ndarray]] | None = None
    embedder_frozen_ctx = [model.embed_enc, model.embed_head] if config.freeze_embedder else []

    for epoch in range(1, config.epochs + 1):
        beta = config.kld_weight * min(1.0, epoch / config.anneal_epochs)
        model.train()
        order = rng.permutation(len(x_train))
        sums = {"recon": 0.0, "kld": 0.0, "pred": 0.0}
        n_batches = 0
        for start in range(0, len(order), config.batch):
            idx = order[start : start + config.batch]
            xb, yb = Tensor(x_train[idx]), Tensor(y_train[idx])

            for _ in range(config.predictor_updates):
                embed = None
                if arch.encoder_conditions_on_curve:
                    embed = Tensor(model.embed_tensor(yb, rng).data)
                mu, logvar = model.encode_tensor(xb, embed, rng)
                z = Tensor(reparam_sample(mu, logvar, rng).data)  # detached: encoder frozen
                l_pred = mse(model.predict_tensor(z, rng), yb)
                if not np.isfinite(l_pred.item()):
                    raise TrainingDiverged(f"non-finite predictor loss at epoch {epoch}")
                l_pred.backward()
                opt_pred.step()
                model.zero_grad()
                sums["pred"] += l_pred.item()

            embed = model.embed_tensor(yb, rng)
            mu, logvar = model.encode_tensor(xb, embed, rng)
            z = reparam_sample(mu, logvar, rng)
            recon = mse(model.decode_tensor(z, embed, rng), xb)
            kld = kld_gauss(mu, logvar)
            if kld.item() < -1e-9:
                raise AssertionError(f"negative KLD {kld.item()} at epoch {epoch}")
            with frozen(model.pred_map, model.predictor, *embedder_frozen_ctx):
                l_pred_gen = mse(model.predict_tensor(z, rng), yb)
                loss = recon + beta * kld - config.eta * l_pred_gen
                if not np.isfinite(loss.item()):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
                loss.backward()
            opt_gen.step()
            model.zero_grad()
            sums["recon"] += recon.item()
            sums["kld"] += kld.item()
            n_batches += 1

        val_recon = _evaluate_recon(model, x_val, y_val)
        history.append(
            {
                "epoch": epoch,
                "beta": beta,
                "train_recon": sums["recon"] / n_batches,
                "train_kld": sums["kld"] / n_batches,
                "train_pred": sums["pred"] / (n_batches * config.predictor_updates),
                "val_recon": val_recon,
            }
        )
        if best is None or val_recon < best[0]:
            best = (val_recon, {k: v.copy() for k, v in model.state_arrays().items()})
    model.load_state_arrays(best[1])
    model.eval()
    return model, history


def _evaluate_recon(model: DesignCvae, x_val: np.ndarray, y_val: np.ndarray, batch: int = 256) -> float:
    model.eval()
    total = 0.0
    n = len(x_val)
    for start in range(0, n, batch):
        xb, yb = Tensor(x_val[start : start + batch]), Tensor(y_val[start : start + batch])
        embed = model.embed_tensor(yb)
        mu, _ = model.encode_tensor(xb, embed if model.arch.encoder_conditions_on_curve else None)
        recon = mse(model.decode_tensor(mu, embed), xb)
        total += recon.item() * xb.shape[0] / n
    return total


def disentanglement_audit(
    model: DesignCvae,
    records: list[DatasetRecord],
    seed: int = 0,
    epochs: int = 150,
    batch: int = 32,
    lr: float = 1e-3,
    val_fraction: float = 0.1,
) -> float:
    """How little the design latent reveals about the curve.

    Trains a fresh predictor from scratch on frozen posterior means and
    returns its best validation MSE divided by the MSE of predicting the
    training-mean curve. 1.0 means the latent carries no usable curve
    information; lower means leakage.
    """
    _, curve_scaler = model._scalers()
    designs = np.stack([r.design.as_array() for r in records])
    curves = curve_scaler.to_normalized(records_matrix(records))
    mu, _ = model.encode_designs(designs, records_matrix(records))

    perm = np.random.default_rng(seed).permutation(len(records))
    n_val = min(max(1, math.ceil(len(records) * val_fraction)), len(records) - 1)
    val_idx, train_idx = perm[:n_val], perm[n_val:]

    rng = np.random.default_rng(seed)
    pred_map = Dense(model.arch.latent, model.arch.predictor_map_dim, rng, name="audit_map")
    predictor = CurveDecoder(model.vae_arch, rng, latent_in=model.arch.predictor_map_dim, out_channels=1)
    params = {**{f"map.{k}": v for k, v in pred_map.parameters().items()},
              **{f"dec.{k}": v for k, v in predictor.parameters().items()}}
    optimizer = Adam(params, lr=lr)

    def forward(z_batch: Tensor, rng_arg=None) -> Tensor:
        out = predictor(pred_map(z_batch, rng_arg), rng_arg)
        return ops.reshape(out, (z_batch.shape[0], model.vae_arch.n_points))

    baseline = float(((curves[val_idx] - curves[train_idx].mean(axis=0)) ** 2).mean())
    best_val = np.inf
    for _epoch in range(epochs):
        pred_map.train()
        predictor.train()
        order = rng.permutation(len(train_idx))
        for start in range(0, len(order), batch):
            idx = train_idx[order[start : start + batch]]
            loss = mse(forward(Tensor(mu[idx]), rng), Tensor(curves[idx]))
            loss.backward()
            optimizer.step()
            for p in params.values():
                p.zero_grad()
        pred_map.eval()
        predictor.eval()
        val_mse = mse(forward(Tensor(mu[val_idx])), Tensor(curves[val_idx])).item()
        best_val = min(best_val, val_mse)
    return float(best_val / baseline)
