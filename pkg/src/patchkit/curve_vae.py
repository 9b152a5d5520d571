"""Stage-1 beta-VAE over 1000-point reflection curves with a 64-dim latent.

The convolutional encoder and transposed-convolution decoder defined here
are also the architectural building blocks reused by the design CVAE's
condition embedder / adversarial predictor and by the uncertainty
surrogate, so both are exposed as factories.

Curves are trained in normalized space: an affine map to zero mean and
unit variance fitted on the training split and stored in the checkpoint.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import (
    Adam,
    BatchNorm1d,
    Conv1d,
    ConvTranspose1d,
    Dense,
    Dropout,
    GELU,
    Module,
    ReLU,
    Sequential,
    Tensor,
    kld_gauss,
    load_checkpoint,
    mse,
    ops,
    reparam_sample,
    save_checkpoint,
)
from .autodiff.tensor import conv1d_out_length
from .cavity import ResponseCurve
from .data import DatasetRecord

__all__ = [
    "CurveDecoder",
    "CurveEncoder",
    "CurveScaler",
    "CurveVaeArch",
    "ResponseVae",
    "TrainingDiverged",
    "VaeTrainConfig",
    "effective_kld_weight",
    "train_vae",
]


class TrainingDiverged(RuntimeError):
    """Raised when a training loss goes non-finite."""


@dataclass(frozen=True)
class CurveVaeArch:
    n_points: int = 1000
    latent: int = 64
    enc_channels: tuple[int, ...] = (16, 32, 64, 64, 128)
    kernel: int = 7
    stride: int = 2
    dec_base_len: int = 16
    dec_channels: tuple[int, ...] = (64, 32, 16)
    dropout: float = 0.1
    bn_momentum: float = 0.1


@dataclass(frozen=True)
class VaeTrainConfig:
    epochs: int = 250
    batch: int = 32
    lr: float = 1e-3
    kld_weight: float = 0.016
    anneal_epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.anneal_epochs > self.epochs:
            raise ValueError("anneal_epochs must not exceed epochs")
        if self.kld_weight <= 0.0:
            raise ValueError("kld_weight must be positive")


def effective_kld_weight(epoch: int, config: VaeTrainConfig) -> float:
    """Linear ramp to the full weight over the first ``anneal_epochs`` epochs."""
    return config.kld_weight * min(1.0, epoch / config.anneal_epochs)


@dataclass(frozen=True)
class CurveScaler:
    """Affine map between dB curves and normalized training space."""

    mean: float
    std: float

    @classmethod
    def fit(cls, values_db: np.ndarray) -> "CurveScaler":
        return cls(mean=float(values_db.mean()), std=float(values_db.std()))

    def to_normalized(self, values_db: np.ndarray) -> np.ndarray:
        return (values_db - self.mean) / self.std

    def to_db(self, values_norm: np.ndarray) -> np.ndarray:
        return values_norm * self.std + self.mean


class CurveEncoder(Module):
    """Strided conv stack (B, n_points) -> flat feature vector (B, flat_dim)."""

    def __init__(self, arch: CurveVaeArch, rng: np.random.Generator, name: str = "curve_encoder"):
        super().__init__(name)
        layers: list[Module] = []
        c_prev = 1
        length = arch.n_points
        pad = (arch.kernel - 1) // 2
        for i, c in enumerate(arch.enc_channels):
            layers.append(Conv1d(c_prev, c, arch.kernel, arch.stride, rng, pad, name=f"conv{i}"))
            layers.append(ReLU(name=f"relu{i}"))
            length = conv1d_out_length(length, arch.kernel, arch.stride, pad)
            c_prev = c
        self.convs = self.register_module("convs", Sequential(layers, name="convs"))
        self.out_length = length
        self.flat_dim = c_prev * length
        self.n_points = arch.n_points

    def forward(self, x, rng=None):
        if x.shape[-1] != self.n_points:
            raise ValueError(f"expected curves of length {self.n_points}, got {x.shape[-1]}")
        h = ops.reshape(x, (x.shape[0], 1, self.n_points))
        h = self.convs(h, rng)
        return ops.reshape(h, (h.shape[0], self.flat_dim))


class CurveDecoder(Module):
    """Latent vector -> (B, out_channels, n_points) curve stack.

    Dense expansion to a coarse feature map, three stride-2 transposed
    convolutions with batch norm / GELU / dropout, a linear transposed
    convolution to the output channels, then a per-channel dense trim to
    exactly ``n_points`` samples.
    """

    def __init__(
        self,
        arch: CurveVaeArch,
        rng: np.random.Generator,
        latent_in: int | None = None,
        out_channels: int = 1,
        name: str = "curve_decoder",
    ):
        super().__init__(name)
        self.arch = arch
        self.out_channels = out_channels
        self.latent_in = arch.latent if latent_in is None else latent_in
        self.base_c = arch.enc_channels[-1]
        self.base_len = arch.dec_base_len
        self.expand = self.register_module(
            "expand", Dense(self.latent_in, self.base_c * self.base_len, rng, name="expand")
        )
        pad = (arch.kernel - 1) // 2
        layers: list[Module] = []
        c_prev = self.base_c
        length = self.base_len
        for i, c in enumerate(arch.dec_channels):
            layers.append(
                ConvTranspose1d(
                    c_prev, c, arch.kernel, arch.stride, rng, pad,
                    output_padding=arch.stride - 1, name=f"tconv{i}",
                )
            )
            layers.append(BatchNorm1d(c, momentum=arch.bn_momentum, name=f"bn{i}"))
            layers.append(GELU(name=f"gelu{i}"))
            layers.append(Dropout(arch.dropout, name=f"drop{i}"))
            length = length * arch.stride
            c_prev = c
        self.stack = self.register_module("stack", Sequential(layers, name="stack"))
        self.final = self.register_module(
            "final",
            ConvTranspose1d(
                c_prev, out_channels, arch.kernel, arch.stride, rng, pad,
                output_padding=arch.stride - 1, name="final",
            ),
        )
        self.pre_trim_len = length * arch.stride
        self.trims = [
            self.register_module(f"trim{c}", Dense(self.pre_trim_len, arch.n_points, rng, name=f"trim{c}"))
            for c in range(out_channels)
        ]

    def forward(self, z, rng=None):
        b = z.shape[0]
        h = self.expand(z)
        h = ops.reshape(h, (b, self.base_c, self.base_len))
        h = self.stack(h, rng)
        h = self.final(h, rng)
        outs = []
        for c, trim in enumerate(self.trims):
            channel = ops.reshape(ops.narrow(h, 1, c, 1), (b, self.pre_trim_len))
            outs.append(ops.reshape(trim(channel), (b, 1, self.arch.n_points)))
        return outs[0] if self.out_channels == 1 else ops.concat(outs, axis=1)


class ResponseVae(Module):
    """Encoder + gaussian heads + decoder over normalized response curves."""

    def __init__(self, arch: CurveVaeArch, rng: np.random.Generator, scaler: CurveScaler | None = None):
        super().__init__("response_vae")
        self.arch = arch
        self.scaler = scaler
        self.encoder = self.register_module("encoder", CurveEncoder(arch, rng))
        self.mu_head = self.register_module(
            "mu_head", Dense(self.encoder.flat_dim, arch.latent, rng, name="mu_head")
        )
        self.logvar_head = self.register_module(
            "logvar_head", Dense(self.encoder.flat_dim, arch.latent, rng, name="logvar_head")
        )
        self.decoder = self.register_module(
            "decoder", CurveDecoder(arch, rng, latent_in=arch.latent, out_channels=1)
        )

    # -- graph-building paths (used in training and latent search)

    def encode_tensor(self, x: Tensor, rng=None) -> tuple[Tensor, Tensor]:
        h = self.encoder(x, rng)
        return self.mu_head(h), self.logvar_head(h)

    def decode_tensor(self, z: Tensor, rng=None) -> Tensor:
        out = self.decoder(z, rng)
        return ops.reshape(out, (z.shape[0], self.arch.n_points))

    # -- frozen numpy conveniences (evaluation mode)

    def _require_scaler(self) -> CurveScaler:
        if self.scaler is None:
            raise RuntimeError("model has no curve scaler; train or load a checkpoint first")
        return self.scaler

    def encode(self, curve: ResponseCurve | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """dB curve -> (mu, logvar), each shape (latent,)."""
        values = curve.values if isinstance(curve, ResponseCurve) else np.asarray(curve)
        mu, logvar = self.encode_batch(values[None, :])
        return mu[0], logvar[0]

    def encode_batch(self, values_db: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        scaler = self._require_scaler()
        was_training = self.training
        self.eval()
        x = Tensor(scaler.to_normalized(values_db))
        mu, logvar = self.encode_tensor(x)
        self.train(was_training)
        return mu.data, logvar.data

    def decode(self, z: np.ndarray) -> np.ndarray:
        """Latent -> curve in normalized space (denormalize via the scaler)."""
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 1
        was_training = self.training
        self.eval()
        out = self.decode_tensor(Tensor(z[None, :] if single else z)).data
        self.train(was_training)
        return out[0] if single else out

    def decode_db(self, z: np.ndarray) -> np.ndarray:
        return self._require_scaler().to_db(self.decode(z))

    # -- persistence

    def save(self, path: str | Path, metadata: dict | None = None) -> None:
        arrays = self.state_arrays()
        scaler = self._require_scaler()
        arrays["scaler.mean"] = np.array([scaler.mean])
        arrays["scaler.std"] = np.array([scaler.std])
        meta = dict(metadata or {})
        meta["kind"] = "response_vae"
        meta["arch"] = asdict(self.arch)
        save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path: str | Path) -> tuple["ResponseVae", dict]:
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "response_vae":
            raise ValueError(f"{path}: not a response VAE checkpoint")
        arch_fields = dict(meta["arch"])
        arch_fields["enc_channels"] = tuple(arch_fields["enc_channels"])
        arch_fields["dec_channels"] = tuple(arch_fields["dec_channels"])
        arch = CurveVaeArch(**arch_fields)
        scaler = CurveScaler(float(arrays["scaler.mean"][0]), float(arrays["scaler.std"][0]))
        model = cls(arch, np.random.default_rng(0), scaler)
        model.load_state_arrays(arrays)
        model.eval()
        return model, meta


def records_matrix(records: list[DatasetRecord]) -> np.ndarray:
    return np.stack([rec.curve.values for rec in records])


def train_vae(
    train_records: list[DatasetRecord],
    val_records: list[DatasetRecord],
    config: VaeTrainConfig,
    arch: CurveVaeArch | None = None,
) -> tuple[ResponseVae, list[dict]]:
    """Train with annealed KLD weight; returns the best-validation model.

    Validation total loss is reconstruction plus the final (un-annealed)
    KLD weight times KLD, so epochs are compared on one fixed objective.
    """
    if not train_records or not val_records:
        raise ValueError("train and validation splits must be nonempty")
    arch = arch or CurveVaeArch()
    rng = np.random.default_rng(config.seed)
    scaler = CurveScaler.fit(records_matrix(train_records))
    model = ResponseVae(arch, rng, scaler)
    x_train = scaler.to_normalized(records_matrix(train_records))
    x_val = scaler.to_normalized(records_matrix(val_records))
    optimizer = Adam(model.parameters(), lr=config.lr)
    history: list[dict] = []
    best: tuple[float, dict[str, np.ndarray]] | None = None
    for epoch in range(1, config.epochs + 1):
        beta = effective_kld_weight(epoch, config)
        model.train()
        order = rng.permutation(len(x_train))
        recon_sum = kld_sum = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch):
            batch = Tensor(x_train[order[start : start + config.batch]])
            mu, logvar = model.encode_tensor(batch, rng)
            z = reparam_sample(mu, logvar, rng)
            recon = mse(model.decode_tensor(z, rng), batch)
            kld = kld_gauss(mu, logvar)
            if kld.item() < -1e-9:
                raise AssertionError(f"negative KLD {kld.item()} at epoch {epoch}")
            loss = recon + beta * kld
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            loss.backward()
            optimizer.step()
            model.zero_grad()
            recon_sum += recon.item()
            kld_sum += kld.item()
            n_batches += 1
        val_recon, val_kld = _evaluate(model, x_val)
        val_total = val_recon + config.kld_weight * val_kld
        history.append(
            {
                "epoch": epoch,
                "beta": beta,
                "train_recon": recon_sum / n_batches,
                "train_kld": kld_sum / n_batches,
                "val_recon": val_recon,
                "val_kld": val_kld,
                "val_total": val_total,
            }
        )
        if best is None or val_total < best[0]:
            best = (val_total, {k: v.copy() for k, v in model.state_arrays().items()})
    model.load_state_arrays(best[1])
    model.eval()
    return model, history


def _evaluate(model: ResponseVae, x_val: np.ndarray, batch: int = 256) -> tuple[float, float]:
    """Deterministic validation pass with z = posterior mean."""
    model.eval()
    recon_sum = kld_sum = 0.0
    n = len(x_val)
    for start in range(0, n, batch):
        xb = Tensor(x_val[start : start + batch])
        mu, logvar = model.encode_tensor(xb)
        recon = mse(model.decode_tensor(mu), xb)
        weight = xb.shape[0] / n
        recon_sum += recon.item() * weight
        kld_sum += kld_gauss(mu, logvar).item() * weight
    return recon_sum, kld_sum
