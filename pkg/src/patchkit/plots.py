"""Figure rendering for the report paths; PNGs land next to the CSVs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .cavity import ResponseCurve

__all__ = ["design_comparison_figure", "scaling_figure", "training_figure"]


def _save(fig, path: str | Path, config_hash: str | None) -> None:
    metadata = {"Description": f"config_hash={config_hash}"} if config_hash else None
    fig.savefig(path, dpi=150, metadata=metadata)
    plt.close(fig)


def design_comparison_figure(
    path: str | Path,
    target: ResponseCurve,
    achieved: ResponseCurve,
    f_resonant_ghz: float | None = None,
    title: str = "",
    config_hash: str | None = None,
) -> None:
    """Target curve vs the simulated curve of the chosen design."""
    f = target.grid.points
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(f, target.values, "k--", lw=1.2, label="idealized target")
    ax.plot(f, achieved.values, "-", color="tab:red", lw=1.2, label="cavity model of design")
    if f_resonant_ghz is not None and target.grid.f_min <= f_resonant_ghz <= target.grid.f_max:
        ax.axvline(f_resonant_ghz, color="gray", ls=":", lw=1.0, label="analytic TM10 resonance")
    ax.set_xlabel("frequency (GHz)")
    ax.set_ylabel("|S11| (dB)")
    if title:
        ax.set_title(title)
    ax.legend(loc="lower right", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path, config_hash)


def scaling_figure(
    path: str | Path,
    summary: list[dict],
    axis_label: str,
    config_hash: str | None = None,
) -> None:
    """Best score vs pool size, one line per strategy, std and range bands."""
    fig, ax = plt.subplots(figsize=(6.5, 4))
    strategies = sorted({row["strategy"] for row in summary})
    for strategy, color in zip(strategies, ("tab:blue", "tab:orange", "tab:green")):
        rows = sorted((r for r in summary if r["strategy"] == strategy), key=lambda r: r["budget"])
        x = np.array([r["budget"] for r in rows])
        mean = np.array([r["mean"] for r in rows])
        std = np.array([r["std"] for r in rows])
        lo = np.array([r["min"] for r in rows])
        hi = np.array([r["max"] for r in rows])
        ax.plot(x, mean, "-o", color=color, ms=4, label=strategy)
        ax.fill_between(x, mean - std, mean + std, color=color, alpha=0.25, lw=0)
        ax.fill_between(x, lo, hi, color=color, alpha=0.10, lw=0)
    ax.set_xlabel(axis_label)
    ax.set_ylabel("best surrogate score (lower is better)")
    ax.set_xscale("log")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path, config_hash)


def training_figure(
    path: str | Path,
    history: list[dict],
    keys: list[str],
    config_hash: str | None = None,
) -> None:
    """Per-epoch loss curves from a training history."""
    fig, ax = plt.subplots(figsize=(6.5, 4))
    epochs = [row["epoch"] for row in history]
    for key in keys:
        ax.plot(epochs, [row[key] for row in history], lw=1.0, label=key)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    _save(fig, path, config_hash)
