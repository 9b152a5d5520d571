"""Design sampling, dataset generation, persistence, and splitting.

The sampling grid is denser at small patch lengths and at feed positions
near the patch edge, then augmented with maximin-spaced points drawn
inside the convex hull of the grid. Records are persisted as CSV with
9-significant-digit floats; values are quantized to that precision at
build time so the file format round-trips bit-exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay, QhullError

from .cavity import (
    CavityConfig,
    DesignParams,
    FrequencyGrid,
    ResponseCurve,
    Substrate,
    feasible,
    s11_curve,
)

__all__ = [
    "DatasetRecord",
    "SamplingBounds",
    "build_dataset",
    "grid_sample",
    "hull_augment",
    "load_dataset",
    "quantize",
    "save_dataset",
    "split",
]


@dataclass(frozen=True)
class SamplingBounds:
    """Axis ranges for design sampling; p is additionally bounded by -L/2."""

    l_min: float = 7.5
    l_max: float = 52.5
    wl_min: float = 0.8
    wl_max: float = 2.0
    p_min: float = -6.0


@dataclass(frozen=True)
class DatasetRecord:
    design: DesignParams
    curve: ResponseCurve


def quantize(values) -> np.ndarray | float:
    """Round to 9 significant decimal digits (the CSV precision)."""
    if np.isscalar(values):
        return float(f"{values:.9g}")
    arr = np.asarray(values, dtype=np.float64)
    flat = np.array([float(f"{v:.9g}") for v in arr.ravel()])
    return flat.reshape(arr.shape)


def grid_sample(
    bounds: SamplingBounds,
    counts: tuple[int, int, int],
    seed: int = 0,
) -> list[DesignParams]:
    """Deterministic design grid: L geometric, W/L linear, p square-law warped.

    The p axis concentrates points toward the most negative allowed offset
    (the patch edge) and is truncated per-sample to (-L/2, 0). The grid
    itself is deterministic; ``seed`` is accepted for interface uniformity
    and recorded by callers.
    """
    n_l, n_w, n_p = counts
    if min(n_l, n_w, n_p) < 2:
        raise ValueError("need at least 2 samples per axis")
    _ = seed
    l_values = np.geomspace(bounds.l_min, bounds.l_max, n_l)
    ratios = np.linspace(bounds.wl_min, bounds.wl_max, n_w)
    warp = 1.0 - ((np.arange(n_p) + 0.5) / n_p) ** 2  # dense near t=0 (the edge)
    designs = []
    for l in l_values:
        p_edge = max(bounds.p_min, -l / 2.0)
        for ratio in ratios:
            for w in warp:
                designs.append(DesignParams(L=float(l), W=float(ratio * l), p=float(p_edge * w)))
    return designs


def _design_matrix(designs: list[DesignParams]) -> np.ndarray:
    return np.array([[d.L, d.W, d.p] for d in designs])


def hull_augment(
    existing: list[DesignParams],
    target_total: int,
    seed: int = 0,
) -> list[DesignParams]:
    """Maximin rejection sampling inside the convex hull of ``existing``.

    Uniform draws in the bounding box are kept only if they fall inside
    the hull and sit farther (normalized L-infinity distance) from every
    current point than a radius that shrinks whenever acceptance stalls.
    Returns just the new designs, in acceptance order.
    """
    n_add = target_total - len(existing)
    if n_add <= 0:
        return []
    pts = _design_matrix(existing)
    try:
        hull = Delaunay(pts)
    except QhullError as exc:
        raise ValueError("convex hull of existing designs is degenerate") from exc
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = hi - lo
    if np.any(span <= 0.0):
        raise ValueError("convex hull of existing designs is degenerate")
    rng = np.random.default_rng(seed)
    norm_pts = list((pts - lo) / span)
    kept: list[DesignParams] = []
    radius = 0.5 / max(2.0, n_add ** (1.0 / 3.0))
    stall = 0
    current = np.array(norm_pts)
    while len(kept) < n_add:
        u = rng.uniform(size=3)
        cand = lo + u * span
        if hull.find_simplex(cand) < 0:
            continue
        if np.abs(current - u).max(axis=1).min() <= radius:
            stall += 1
            if stall >= 200:
                radius *= 0.9
                stall = 0
            continue
        stall = 0
        kept.append(DesignParams(L=float(cand[0]), W=float(cand[1]), p=float(cand[2])))
        current = np.vstack([current, u])
    return kept


def build_dataset(
    designs: list[DesignParams],
    substrate: Substrate,
    config: CavityConfig,
    grid: FrequencyGrid,
) -> list[DatasetRecord]:
    """Simulate each design on the grid; values quantized to file precision."""
    records = []
    for design in designs:
        dq = DesignParams(quantize(design.L), quantize(design.W), quantize(design.p))
        curve = s11_curve(dq, substrate, config, grid)
        records.append(DatasetRecord(dq, ResponseCurve(quantize(curve.values), grid)))
    return records


def split(
    records: list[DatasetRecord],
    val_fraction: float,
    seed: int,
) -> tuple[list[DatasetRecord], list[DatasetRecord]]:
    """Seeded shuffle into disjoint (train, validation) lists."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must be in (0, 1)")
    n = len(records)
    n_val = min(max(1, math.ceil(n * val_fraction)), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    val = [records[i] for i in perm[:n_val]]
    train = [records[i] for i in perm[n_val:]]
    return train, val


def _format(x: float) -> str:
    return f"{x:.9g}"


def save_dataset(
    path: str | Path,
    records: list[DatasetRecord],
    grid: FrequencyGrid,
    config_hash: str | None = None,
) -> None:
    lines = []
    if config_hash is not None:
        lines.append(f"# config_hash={config_hash}")
    lines.append(f"# grid f_min_ghz={_format(grid.f_min)} f_max_ghz={_format(grid.f_max)} n={grid.n}")
    header = ["L_mm", "W_mm", "p_mm"] + [f"s11_db_{i + 1:04d}" for i in range(grid.n)]
    lines.append(",".join(header))
    for rec in records:
        row = [_format(rec.design.L), _format(rec.design.W), _format(rec.design.p)]
        row.extend(_format(v) for v in rec.curve.values)
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path: str | Path) -> tuple[list[DatasetRecord], FrequencyGrid]:
    grid = None
    records = []
    header = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# grid "):
                    fields = dict(part.split("=") for part in line[7:].split())
                    grid = FrequencyGrid(
                        f_min=float(fields["f_min_ghz"]),
                        f_max=float(fields["f_max_ghz"]),
                        n=int(fields["n"]),
                    )
                continue
            if header is None:
                header = line.split(",")
                if header[:3] != ["L_mm", "W_mm", "p_mm"]:
                    raise ValueError(f"{path}:{lineno}: unexpected header {header[:3]}")
                if grid is None:
                    raise ValueError(f"{path}: missing grid comment before header")
                if len(header) != 3 + grid.n:
                    raise ValueError(
                        f"{path}:{lineno}: header has {len(header) - 3} curve columns, "
                        f"grid says {grid.n}"
                    )
                continue
            parts = line.split(",")
            if len(parts) != 3 + grid.n:
                raise ValueError(f"{path}:{lineno}: expected {3 + grid.n} fields, got {len(parts)}")
            design = DesignParams(float(parts[0]), float(parts[1]), float(parts[2]))
            if not feasible(design):
                raise ValueError(
                    f"{path}:{lineno}: infeasible design "
                    f"(L={design.L}, W={design.W}, p={design.p})"
                )
            values = np.array(parts[3:], dtype=np.float64)
            records.append(DatasetRecord(design, ResponseCurve(values, grid)))
    if header is None:
        raise ValueError(f"{path}: no header found")
    return records, grid
