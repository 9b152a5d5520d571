"""Idealized notch targets, frequency masks, and latent-space curve search.

A design goal is a set of Lorentzian notches (center, bandwidth, depth).
The idealized reflection curve is the product of per-notch factors in
linear magnitude, converted to dB. Because no realizable antenna matches
that curve everywhere, the search only penalizes deviations inside the
notch bands: a binary frequency mask restricts the objective, and plain
gradient descent through the frozen Stage-1 decoder moves the latent
vector until the decoded curve matches the target where it matters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, backward, ops
from .autodiff.layers import frozen
from .cavity import FrequencyGrid, ResponseCurve
from .curve_vae import ResponseVae
from .data import DatasetRecord

__all__ = [
    "Notch",
    "SearchConfig",
    "SearchResult",
    "TargetSpec",
    "build_mask",
    "init_latents",
    "latent_search",
    "latent_search_batch",
    "lorentzian_db_at",
    "lorentzian_linear",
    "lorentzian_target",
]


@dataclass(frozen=True)
class Notch:
    f_ghz: float
    bw_ghz: float
    depth_db: float


@dataclass(frozen=True)
class TargetSpec:
    """One or more desired resonant notches."""

    notches: tuple[Notch, ...]

    def __post_init__(self):
        if not self.notches:
            raise ValueError("target spec needs at least one notch")

    def validate(self, grid: FrequencyGrid) -> None:
        for notch in self.notches:
            if not grid.f_min <= notch.f_ghz <= grid.f_max:
                raise ValueError(
                    f"notch at {notch.f_ghz} GHz lies outside the grid "
                    f"[{grid.f_min}, {grid.f_max}] GHz"
                )
            if notch.bw_ghz <= 0.0:
                raise ValueError(f"notch bandwidth must be positive, got {notch.bw_ghz}")
            if notch.depth_db >= 0.0:
                raise ValueError(f"notch depth must be negative dB, got {notch.depth_db}")

    @classmethod
    def parse(cls, triples: list[str]) -> "TargetSpec":
        """Build from CLI strings of the form ``f_ghz:bw_ghz:depth_db``."""
        notches = []
        for triple in triples:
            parts = triple.split(":")
            if len(parts) != 3:
                raise ValueError(f"bad notch {triple!r}; expected f_ghz:bw_ghz:depth_db")
            try:
                f, bw, d = (float(p) for p in parts)
            except ValueError as exc:
                raise ValueError(f"bad notch {triple!r}: {exc}") from None
            notches.append(Notch(f, bw, d))
        return cls(tuple(notches))

    def describe(self) -> str:
        return "+".join(f"{n.f_ghz:g}:{n.bw_ghz:g}:{n.depth_db:g}" for n in self.notches)


def lorentzian_linear(spec: TargetSpec, f) -> np.ndarray:
    """Linear-magnitude idealized response: a product of notch factors."""
    f = np.asarray(f, dtype=np.float64)
    out = np.ones_like(f)
    for notch in spec.notches:
        half = notch.bw_ghz / 2.0
        shape = half**2 / ((f - notch.f_ghz) ** 2 + half**2)
        out = out * (1.0 - (1.0 - 10.0 ** (notch.depth_db / 20.0)) * shape)
    return out


def lorentzian_db_at(spec: TargetSpec, f) -> np.ndarray:
    return 20.0 * np.log10(lorentzian_linear(spec, f))


def lorentzian_target(spec: TargetSpec, grid: FrequencyGrid) -> ResponseCurve:
    """Idealized target curve in dB on the grid."""
    spec.validate(grid)
    return ResponseCurve(lorentzian_db_at(spec, grid.points), grid)


def build_mask(spec: TargetSpec, grid: FrequencyGrid, band_factor: float = 1.0) -> np.ndarray:
    """Binary weights: 1 within ``band_factor * bw`` of any notch center."""
    if band_factor <= 0.0:
        raise ValueError("band_factor must be positive")
    spec.validate(grid)
    f = grid.points
    mask = np.zeros_like(f)
    for notch in spec.notches:
        mask[np.abs(f - notch.f_ghz) <= band_factor * notch.bw_ghz] = 1.0
    if not mask.any():
        raise ValueError("mask selects no grid points; notch bands too narrow for the grid")
    return mask


@dataclass(frozen=True)
class SearchConfig:
    alpha: float = 0.05
    iters: int = 200
    lambda_reg: float = 1e-3
    init: str = "random"  # or "k-closest"
    seed: int = 0

    def __post_init__(self):
        if self.alpha <= 0.0:
            raise ValueError("step size must be positive")
        if self.iters < 1:
            raise ValueError("iteration budget must be >= 1")
        if self.lambda_reg < 0.0:
            raise ValueError("regularization weight must be >= 0")
        if self.init not in ("random", "k-closest"):
            raise ValueError(f"unknown init strategy {self.init!r}")


@dataclass
class SearchResult:
    z: np.ndarray
    curve: ResponseCurve
    masked_loss: float  # masked component, normalized curve space
    objective: float  # masked + regularizer at the returned iterate


def init_latents(
    strategy: str,
    k: int,
    spec: TargetSpec,
    records: list[DatasetRecord],
    vae: ResponseVae,
    seed: int,
    band_factor: float = 1.0,
) -> np.ndarray:
    """Starting latents: prior samples, or encodings of the k nearest curves.

    k-closest ranks training curves by masked squared distance to the
    idealized target (normalized space) with stable index tie-breaking,
    and returns their posterior means in increasing-distance order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if strategy == "random":
        return np.random.default_rng(seed).standard_normal((k, vae.arch.latent))
    if strategy != "k-closest":
        raise ValueError(f"unknown init strategy {strategy!r}")
    if k > len(records):
        raise ValueError(f"k={k} exceeds dataset size {len(records)}")
    grid = records[0].curve.grid
    scaler = vae.scaler
    y_star = scaler.to_normalized(lorentzian_target(spec, grid).values)
    mask = build_mask(spec, grid, band_factor)
    curves = scaler.to_normalized(np.stack([r.curve.values for r in records]))
    dists = ((curves - y_star) ** 2 * mask).sum(axis=1)
    order = np.argsort(dists, kind="stable")[:k]
    mu, _ = vae.encode_batch(np.stack([records[i].curve.values for i in order]))
    return mu


def latent_search(
    z0: np.ndarray,
    y_star: ResponseCurve | np.ndarray,
    mask: np.ndarray,
    vae: ResponseVae,
    config: SearchConfig,
) -> SearchResult:
    """Gradient search of one latent; returns the best-objective iterate."""
    return latent_search_batch(np.asarray(z0)[None, :], y_star, mask, vae, config)[0]


def latent_search_batch(
    z0: np.ndarray,
    y_star: ResponseCurve | np.ndarray,
    mask: np.ndarray,
    vae: ResponseVae,
    config: SearchConfig,
) -> list[SearchResult]:
    """Vectorized gradient searches from a batch of starting latents.

    Each row minimizes masked mean squared error between the decoded
    (normalized) curve and the normalized target, plus an L2 pull toward
    the prior; rows are independent. The best-objective iterate per row
    is returned along with its decoded dB curve.
    """
    values = y_star.values if isinstance(y_star, ResponseCurve) else np.asarray(y_star)
    scaler = vae.scaler
    target = scaler.to_normalized(values)
    mask = np.asarray(mask, dtype=np.float64)
    count = mask.sum()
    if count <= 0:
        raise ValueError("mask selects no entries")
    vae.eval()
    z = np.array(z0, dtype=np.float64)
    n = z.shape[0]
    best_obj = np.full(n, np.inf)
    best_masked = np.zeros(n)
    best_z = z.copy()

    def evaluate(z_arr: np.ndarray, need_grad: bool):
        zt = Tensor(z_arr, requires_grad=need_grad)
        out = vae.decode_tensor(zt)
        diff = out - Tensor(target[None, :])
        masked_rows = ops.sum_(diff * diff * Tensor(mask[None, :]), axis=1) * (1.0 / count)
        reg_rows = ops.sum_(zt * zt, axis=1) * config.lambda_reg
        obj_rows = masked_rows + reg_rows
        if need_grad:
            backward(ops.sum_(obj_rows))
        return masked_rows.data, obj_rows.data, (zt.grad if need_grad else None)

    with frozen(vae):
        for t in range(config.iters + 1):
            need_grad = t < config.iters
            masked_now, obj_now, grad = evaluate(z, need_grad)
            if not np.all(np.isfinite(obj_now)):
                raise RuntimeError(f"non-finite search objective at iteration {t}")
            improved = obj_now < best_obj
            best_obj[improved] = obj_now[improved]
            best_masked[improved] = masked_now[improved]
            best_z[improved] = z[improved]
            if need_grad:
                z = z - config.alpha * grad
    results = []
    decoded = vae.decode_db(best_z)
    grid = y_star.grid if isinstance(y_star, ResponseCurve) else FrequencyGrid(n=len(values))
    for i in range(n):
        results.append(
            SearchResult(
                z=best_z[i],
                curve=ResponseCurve(decoded[i], grid),
                masked_loss=float(best_masked[i]),
                objective=float(best_obj[i]),
            )
        )
    return results
