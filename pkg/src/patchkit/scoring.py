"""Candidate ranking: exact cavity-model scoring and a learned surrogate.

The oracle scorer simulates a design with the analytic cavity model and
takes the masked MSE against the target curve. The surrogate scorer uses
a network that predicts a mean curve and a per-frequency variance; its
score is the precision-weighted masked squared error, so uncertain
frequency regions count less. Scores are comparable only within one
method and mask.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autodiff import (
    Adam,
    Dense,
    Module,
    Tensor,
    beta_nll,
    load_checkpoint,
    ops,
    save_checkpoint,
)
from .cavity import (
    CavityConfig,
    DesignParams,
    FrequencyGrid,
    ResponseCurve,
    Substrate,
    feasible,
    s11_curve,
)
from .curve_vae import CurveDecoder, CurveScaler, CurveVaeArch, TrainingDiverged, records_matrix
from .data import DatasetRecord
from .design_cvae import DesignScaler

__all__ = [
    "Score",
    "ScoringConfig",
    "Surrogate",
    "SurrogateTrainConfig",
    "calibration_coverage",
    "oracle_score",
    "surrogate_score",
    "train_surrogate",
    "write_score_table",
]

VAR_FLOOR = 1e-6


@dataclass(frozen=True)
class ScoringConfig:
    """Optional out-of-band hinge: penalize dips deeper than the threshold
    at masked-out frequencies. Off by default; the threshold is a guess
    (no established value exists for "shallow enough" out-of-band dips)."""

    hinge_enabled: bool = False
    hinge_threshold_db: float = -3.0


@dataclass(frozen=True)
class Score:
    value: float
    method: str
    feasible: bool = True


def _masked_mse(curve_db: np.ndarray, target_db: np.ndarray, mask: np.ndarray) -> float:
    count = mask.sum()
    if count <= 0:
        raise ValueError("mask selects no entries")
    return float((mask * (curve_db - target_db) ** 2).sum() / count)


def oracle_score(
    design: DesignParams,
    y_star: ResponseCurve,
    mask: np.ndarray,
    substrate: Substrate,
    config: CavityConfig,
    scoring: ScoringConfig | None = None,
) -> Score:
    """Masked MSE of the analytic curve against the target; inf if infeasible."""
    scoring = scoring or ScoringConfig()
    if not feasible(design):
        return Score(value=float("inf"), method="oracle", feasible=False)
    curve = s11_curve(design, substrate, config, y_star.grid)
    value = _masked_mse(curve.values, y_star.values, np.asarray(mask, dtype=np.float64))
    if scoring.hinge_enabled:
        out_of_band = np.asarray(mask) == 0
        overshoot = np.maximum(0.0, scoring.hinge_threshold_db - curve.values[out_of_band])
        value += float((overshoot**2).sum())
    return Score(value=value, method="oracle", feasible=True)


class Surrogate(Module):
    """Design triple -> (mean curve, variance curve) with dB conveniences."""

    def __init__(
        self,
        vae_arch: CurveVaeArch,
        rng: np.random.Generator,
        design_scaler: DesignScaler | None = None,
        curve_scaler: CurveScaler | None = None,
        design_dim: int = 3,
    ):
        super().__init__("surrogate")
        self.vae_arch = vae_arch
        self.design_dim = design_dim
        self.design_scaler = design_scaler
        self.curve_scaler = curve_scaler
        self.input_map = self.register_module(
            "input_map", Dense(design_dim, vae_arch.latent, rng, name="input_map")
        )
        self.body = self.register_module(
            "body", CurveDecoder(vae_arch, rng, latent_in=vae_arch.latent, out_channels=2, name="body")
        )

    def forward_tensor(self, x_norm: Tensor, rng=None) -> tuple[Tensor, Tensor]:
        """Normalized designs -> (mean, variance) in normalized curve space."""
        out = self.body(self.input_map(x_norm, rng), rng)
        n = self.vae_arch.n_points
        mu = ops.reshape(ops.narrow(out, 1, 0, 1), (x_norm.shape[0], n))
        logvar = ops.reshape(ops.narrow(out, 1, 1, 1), (x_norm.shape[0], n))
        var = ops.relu(ops.exp(logvar) - VAR_FLOOR) + VAR_FLOOR
        return mu, var

    def _scalers(self) -> tuple[DesignScaler, CurveScaler]:
        if self.design_scaler is None or self.curve_scaler is None:
            raise RuntimeError("surrogate has no scalers; train or load a checkpoint first")
        return self.design_scaler, self.curve_scaler

    def predict(self, designs_mm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Designs (B, 3) in mm -> (mean_db, var_db), each (B, N)."""
        design_scaler, curve_scaler = self._scalers()
        was_training = self.training
        self.eval()
        mu, var = self.forward_tensor(Tensor(design_scaler.to_normalized(designs_mm)))
        self.train(was_training)
        mean_db = curve_scaler.to_db(mu.data)
        var_db = var.data * curve_scaler.std**2
        return mean_db, var_db

    def save(self, path: str | Path, metadata: dict | None = None) -> None:
        design_scaler, curve_scaler = self._scalers()
        arrays = self.state_arrays()
        arrays["design_scaler.mean"] = design_scaler.mean
        arrays["design_scaler.std"] = design_scaler.std
        arrays["curve_scaler.mean"] = np.array([curve_scaler.mean])
        arrays["curve_scaler.std"] = np.array([curve_scaler.std])
        meta = dict(metadata or {})
        meta["kind"] = "surrogate"
        meta["vae_arch"] = asdict(self.vae_arch)
        save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path: str | Path) -> tuple["Surrogate", dict]:
        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "surrogate":
            raise ValueError(f"{path}: not a surrogate checkpoint")
        fields = dict(meta["vae_arch"])
        fields["enc_channels"] = tuple(fields["enc_channels"])
        fields["dec_channels"] = tuple(fields["dec_channels"])
        model = cls(
            CurveVaeArch(**fields),
            np.random.default_rng(0),
            DesignScaler(arrays["design_scaler.mean"], arrays["design_scaler.std"]),
            CurveScaler(float(arrays["curve_scaler.mean"][0]), float(arrays["curve_scaler.std"][0])),
        )
        model.load_state_arrays(arrays)
        model.eval()
        return model, meta


def surrogate_score(
    design: DesignParams,
    y_star: ResponseCurve,
    mask: np.ndarray,
    surrogate: Surrogate,
) -> Score:
    """Precision-weighted masked squared error of the predicted mean curve."""
    mask = np.asarray(mask, dtype=np.float64)
    count = mask.sum()
    if count <= 0:
        raise ValueError("mask selects no entries")
    mean_db, var_db = surrogate.predict(design.as_array()[None, :])
    value = float((mask * (mean_db[0] - y_star.values) ** 2 / var_db[0]).sum() / count)
    return Score(value=value, method="surrogate", feasible=feasible(design))


@dataclass(frozen=True)
class SurrogateTrainConfig:
    epochs: int = 500
    batch: int = 64
    lr: float = 5e-3
    beta: float = 0.5
    seed: int = 0


def train_surrogate(
    train_records: list[DatasetRecord],
    val_records: list[DatasetRecord],
    config: SurrogateTrainConfig,
    vae_arch: CurveVaeArch | None = None,
) -> tuple[Surrogate, list[dict]]:
    """Heteroscedastic regression on (design -> curve); best-validation model."""
    if not train_records or not val_records:
        raise ValueError("train and validation splits must be nonempty")
    vae_arch = vae_arch or CurveVaeArch()
    rng = np.random.default_rng(config.seed)
    designs_train = np.stack([r.design.as_array() for r in train_records])
    design_scaler = DesignScaler.fit(designs_train)
    curve_scaler = CurveScaler.fit(records_matrix(train_records))
    model = Surrogate(vae_arch, rng, design_scaler, curve_scaler)
    x_train = design_scaler.to_normalized(designs_train)
    y_train = curve_scaler.to_normalized(records_matrix(train_records))
    x_val = design_scaler.to_normalized(np.stack([r.design.as_array() for r in val_records]))
    y_val = curve_scaler.to_normalized(records_matrix(val_records))
    optimizer = Adam(model.parameters(), lr=config.lr)
    history: list[dict] = []
    best: tuple[float, dict[str, np.ndarray]] | None = None
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = rng.permutation(len(x_train))
        train_nll = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch):
            idx = order[start : start + config.batch]
            mu, var = model.forward_tensor(Tensor(x_train[idx]), rng)
            loss = beta_nll(mu, var, Tensor(y_train[idx]), config.beta)
            if not np.isfinite(loss.item()):
                raise TrainingDiverged(f"non-finite surrogate loss at epoch {epoch}")
            loss.backward()
            optimizer.step()
            model.zero_grad()
            train_nll += loss.item()
            n_batches += 1
        val_nll = _evaluate_nll(model, x_val, y_val, config.beta)
        history.append(
            {"epoch": epoch, "train_nll": train_nll / n_batches, "val_nll": val_nll}
        )
        if best is None or val_nll < best[0]:
            best = (val_nll, {k: v.copy() for k, v in model.state_arrays().items()})
    model.load_state_arrays(best[1])
    model.eval()
    return model, history


def _evaluate_nll(model: Surrogate, x_val: np.ndarray, y_val: np.ndarray, beta: float, batch: int = 256) -> float:
    model.eval()
    total = 0.0
    n = len(x_val)
    for start in range(0, n, batch):
        xb = Tensor(x_val[start : start + batch])
        mu, var = model.forward_tensor(xb)
        total += beta_nll(mu, var, Tensor(y_val[start : start + batch]), beta).item() * xb.shape[0] / n
    return total


def calibration_coverage(model: Surrogate, records: list[DatasetRecord], k_sigma: float = 2.0) -> float:
    """Fraction of held-out curve samples within k sigma of the predicted mean."""
    designs = np.stack([r.design.as_array() for r in records])
    curves = records_matrix(records)
    mean_db, var_db = model.predict(designs)
    return float((np.abs(curves - mean_db) <= k_sigma * np.sqrt(var_db)).mean())


def write_score_table(
    path: str | Path,
    rows: list[tuple[DesignParams, Score]],
    config_hash: str | None = None,
) -> None:
    """Ranked score CSV: rank,L_mm,W_mm,p_mm,score,method,feasible."""
    lines = []
    if config_hash is not None:
        lines.append(f"# config_hash={config_hash}")
    lines.append("rank,L_mm,W_mm,p_mm,score,method,feasible")
    for rank, (design, score) in enumerate(rows, start=1):
        lines.append(
            f"{rank},{design.L:.9g},{design.W:.9g},{design.p:.9g},"
            f"{score.value:.9g},{score.method},{int(score.feasible)}"
        )
    Path(path).write_text("\n".join(lines) + "\n")
