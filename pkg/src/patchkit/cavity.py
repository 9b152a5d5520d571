"""Analytic multi-mode cavity model for coaxial-fed rectangular patches.

Produces the reflection-coefficient magnitude |S11| in dB over a frequency
grid from a closed-form input impedance: a probe inductance in series with
a sum of parallel-RLC style resonator terms, one per length-axis mode. The
same model backs dataset generation and exact candidate scoring, so the
whole pipeline is self-consistent without a field solver.

Conventions: lengths in millimeters, frequencies in GHz, impedances in ohms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CavityConfig",
    "DesignParams",
    "FrequencyGrid",
    "ResponseCurve",
    "Substrate",
    "eps_eff",
    "feasible",
    "feed_offset_for_match",
    "input_impedance",
    "resonant_freq_tm10",
    "s11_curve",
    "to_db",
]

C_MM_GHZ = 299.792458  # speed of light, mm * GHz
GAMMA_FLOOR = 1e-9  # |S11| clamp before the log, bounds curves at -180 dB
Q_MIN, Q_MAX = 15.0, 300.0


@dataclass(frozen=True)
class DesignParams:
    """Patch geometry: length L, width W, feed offset p from patch center."""

    L: float
    W: float
    p: float

    def as_array(self) -> np.ndarray:
        return np.array([self.L, self.W, self.p])


@dataclass(frozen=True)
class Substrate:
    eps_r: float = 3.68
    h: float = 1.61

    def __post_init__(self):
        if self.eps_r <= 1.0:
            raise ValueError("relative permittivity must exceed 1")
        if self.h <= 0.0:
            raise ValueError("substrate thickness must be positive")


@dataclass(frozen=True)
class FrequencyGrid:
    f_min: float = 1.0
    f_max: float = 10.0
    n: int = 1000

    def __post_init__(self):
        if not self.f_min < self.f_max:
            raise ValueError("f_min must be below f_max")
        if self.n < 2:
            raise ValueError("grid needs at least 2 points")

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.f_min, self.f_max, self.n)

    @property
    def step(self) -> float:
        return (self.f_max - self.f_min) / (self.n - 1)


@dataclass(frozen=True)
class ResponseCurve:
    """|S11| in dB sampled on a frequency grid."""

    values: np.ndarray
    grid: FrequencyGrid = field(default_factory=FrequencyGrid)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.shape != (self.grid.n,):
            raise ValueError(f"curve length {values.shape} does not match grid n={self.grid.n}")
        if not np.all(np.isfinite(values)):
            raise ValueError("curve contains non-finite values")


@dataclass(frozen=True)
class CavityConfig:
    """Knobs of the analytic model."""

    modes: int = 3
    z0: float = 50.0
    q_fix: float | None = None
    probe_reactance: bool = True
    probe_inductance_nh: float = 0.2  # at h = 1.61 mm; scales linearly with h

    def __post_init__(self):
        if self.modes < 1:
            raise ValueError("mode count must be >= 1")
        if self.z0 <= 0.0:
            raise ValueError("reference impedance must be positive")


def feasible(design: DesignParams) -> bool:
    """Physical feasibility: positive dims, feed strictly between center and edge."""
    return design.L > 0.0 and design.W > 0.0 and -design.L / 2.0 < design.p < 0.0


def _require_feasible(design: DesignParams) -> None:
    if not feasible(design):
        raise ValueError(f"infeasible design (L={design.L}, W={design.W}, p={design.p})")


def to_db(gamma_mag) -> np.ndarray | float:
    """20*log10 |S11| with the magnitude clamped at the floor."""
    return 20.0 * np.log10(np.maximum(gamma_mag, GAMMA_FLOOR))


def eps_eff(w: float, substrate: Substrate) -> float:
    """Effective permittivity of a wide microstrip line of width w."""
    if w <= 0.0:
        raise ValueError("width must be positive")
    er = substrate.eps_r
    return (er + 1.0) / 2.0 + (er - 1.0) / 2.0 / np.sqrt(1.0 + 12.0 * substrate.h / w)


def _delta_l(w: float, substrate: Substrate, e_eff: float) -> float:
    """Fringing-field length extension of the open patch edge."""
    ratio = w / substrate.h
    return (
        0.412
        * substrate.h
        * (e_eff + 0.3)
        * (ratio + 0.264)
        / ((e_eff - 0.258) * (ratio + 0.8))
    )


def resonant_freq_tm10(design: DesignParams, substrate: Substrate) -> float:
    """Dominant-mode resonance in GHz from the half-wave condition."""
    _require_feasible(design)
    e_eff = eps_eff(design.W, substrate)
    dl = _delta_l(design.W, substrate, e_eff)
    return C_MM_GHZ / (2.0 * (design.L + 2.0 * dl) * np.sqrt(e_eff))


def _mode_freqs(design: DesignParams, substrate: Substrate, modes: int) -> np.ndarray:
    f1 = resonant_freq_tm10(design, substrate)
    return f1 * np.arange(1, modes + 1)


def _edge_resistance(w: float, f_ghz: float) -> float:
    """Resonant edge resistance from the slot-conductance model."""
    lam0 = C_MM_GHZ / f_ghz
    if w <= 0.35 * lam0:
        g1 = (w / lam0) ** 2 / 90.0
    else:
        g1 = w / (120.0 * lam0) - 1.0 / (60.0 * np.pi**2)
    return 1.0 / (2.0 * g1)


def _quality_factor(design: DesignParams, substrate: Substrate, f_ghz: float) -> float:
    """Inverse fractional bandwidth, clamped to keep notches non-degenerate."""
    er = substrate.eps_r
    lam0 = C_MM_GHZ / f_ghz
    fbw = 3.77 * ((er - 1.0) / er**2) * (design.W / design.L) * (substrate.h / lam0)
    return float(np.clip(1.0 / fbw, Q_MIN, Q_MAX))


def _probe_reactance(config: CavityConfig, substrate: Substrate, f) -> np.ndarray:
    l_probe = config.probe_inductance_nh * (substrate.h / 1.61)
    return 2.0 * np.pi * np.asarray(f, dtype=np.float64) * l_probe


def input_impedance(
    design: DesignParams,
    substrate: Substrate,
    config: CavityConfig,
    f,
) -> np.ndarray | complex:
    """Complex input impedance at frequency f (GHz, scalar or array)."""
    _require_feasible(design)
    f_arr = np.asarray(f, dtype=np.float64)
    if np.any(f_arr <= 0.0):
        raise ValueError("frequency must be positive")
    x0 = design.L / 2.0 + design.p  # feed distance from the radiating edge
    z = np.zeros(f_arr.shape, dtype=np.complex128)
    for m, f_m in enumerate(_mode_freqs(design, substrate, config.modes), start=1):
        r_edge = _edge_resistance(design.W, f_m)
        r_m = r_edge * np.cos(m * np.pi * x0 / design.L) ** 2
        q_m = config.q_fix if config.q_fix is not None else _quality_factor(design, substrate, f_m)
        z = z + r_m / (1.0 + 1j * q_m * (f_arr / f_m - f_m / f_arr))
    if config.probe_reactance:
        z = z + 1j * _probe_reactance(config, substrate, f_arr)
    return z if z.shape else complex(z)


def s11_curve(
    design: DesignParams,
    substrate: Substrate,
    config: CavityConfig,
    grid: FrequencyGrid,
) -> ResponseCurve:
    """Reflection magnitude in dB on the grid: 20*log10 |(Z-Z0)/(Z+Z0)|."""
    z = input_impedance(design, substrate, config, grid.points)
    gamma = (z - config.z0) / (z + config.z0)
    return ResponseCurve(to_db(np.abs(gamma)), grid)


def feed_offset_for_match(
    design_l: float,
    design_w: float,
    substrate: Substrate,
    z0: float = 50.0,
) -> float:
    """Feed offset p that sets the dominant-mode input resistance to z0.

    Solves R_edge * cos^2(pi * x0 / L) = z0 for the feed-to-edge distance
    x0 and returns p = x0 - L/2. Requires R_edge >= z0.
    """
    f1 = resonant_freq_tm10(DesignParams(design_l, design_w, -design_l / 4.0), substrate)
    r_edge = _edge_resistance(design_w, f1)
    if r_edge < z0:
        raise ValueError(f"edge resistance {r_edge:.1f} below target {z0:.1f}; no match point")
    x0 = design_l / np.pi * np.arccos(np.sqrt(z0 / r_edge))
    return float(x0 - design_l / 2.0)
