"""Analytic cavity model: closed forms, limits, and curve invariants."""

import numpy as np
import pytest

from patchkit.cavity import (
    C_MM_GHZ,
    CavityConfig,
    DesignParams,
    FrequencyGrid,
    ResponseCurve,
    Substrate,
    eps_eff,
    feasible,
    feed_offset_for_match,
    input_impedance,
    resonant_freq_tm10,
    s11_curve,
    to_db,
)


SUB = Substrate(eps_r=3.68, h=1.61)
TABLE_DESIGN = DesignParams(L=30.0, W=40.5, p=-7.4)


def hand_eps_eff(er, h, w):
    return (er + 1) / 2 + (er - 1) / 2 * (1 + 12 * h / w) ** -0.5


def hand_resonance(l, w, er, h):
    """Independent literal evaluation of the two closed forms."""
    ee = hand_eps_eff(er, h, w)
    dl = 0.412 * h * (ee + 0.3) * (w / h + 0.264) / ((ee - 0.258) * (w / h + 0.8))
    return 299.792458 / (2 * (l + 2 * dl) * np.sqrt(ee))


class TestEpsEff:
    def test_air_limit(self):
        air = Substrate(eps_r=1.0 + 1e-12, h=1.61)
        assert eps_eff(10.0, air) == pytest.approx(1.0, abs=1e-9)

    def test_wide_patch_limit(self):
        assert eps_eff(1e9, SUB) == pytest.approx(SUB.eps_r, rel=1e-4)

    def test_worked_value(self):
        assert eps_eff(40.5, SUB) == pytest.approx(3.443, abs=5e-4)
        assert eps_eff(40.5, SUB) == pytest.approx(hand_eps_eff(3.68, 1.61, 40.5), rel=1e-12)

    def test_rejects_nonpositive_width(self):
        with pytest.raises(ValueError):
            eps_eff(0.0, SUB)


class TestResonantFreq:
    def test_matches_hand_evaluation(self):
        got = resonant_freq_tm10(TABLE_DESIGN, SUB)
        assert got == pytest.approx(hand_resonance(30.0, 40.5, 3.68, 1.61), rel=1e-12)

    def test_air_line_limit(self):
        air = Substrate(eps_r=1.0 + 1e-9, h=1.61)
        d = DesignParams(L=30.0, W=40.5, p=-7.4)
        ee = eps_eff(d.W, air)
        dl = 0.412 * air.h * (ee + 0.3) * (d.W / air.h + 0.264) / ((ee - 0.258) * (d.W / air.h + 0.8))
        assert resonant_freq_tm10(d, air) == pytest.approx(C_MM_GHZ / (2 * (d.L + 2 * dl)), rel=1e-6)

    def test_monotone_decreasing_in_length(self):
        freqs = [resonant_freq_tm10(DesignParams(l, 1.2 * l, -l / 4), SUB) for l in (10, 20, 40)]
        assert freqs[0] > freqs[1] > freqs[2]
        half = resonant_freq_tm10(DesignParams(15.0, 40.5, -7.0), SUB)
        full = resonant_freq_tm10(DesignParams(30.0, 40.5, -7.0), SUB)
        assert full < half  # doubling L roughly halves f_r
        assert half / full == pytest.approx(2.0, rel=0.15)

    def test_monotone_decreasing_in_permittivity(self):
        lo = resonant_freq_tm10(TABLE_DESIGN, Substrate(2.2, 1.61))
        hi = resonant_freq_tm10(TABLE_DESIGN, Substrate(6.0, 1.61))
        assert lo > hi

    def test_rejects_infeasible(self):
        with pytest.raises(ValueError, match="infeasible"):
            resonant_freq_tm10(DesignParams(30.0, 40.5, 0.0), SUB)


class TestFeasibility:
    def test_strict_boundaries(self):
        assert feasible(DesignParams(30.0, 40.0, -7.0))
        assert not feasible(DesignParams(30.0, 40.0, 0.0))
        assert not feasible(DesignParams(30.0, 40.0, -15.0))  # p = -L/2
        assert not feasible(DesignParams(30.0, 40.0, 1.0))
        assert not feasible(DesignParams(-1.0, 40.0, -0.1))
        assert not feasible(DesignParams(30.0, 0.0, -7.0))


class TestInputImpedance:
    def test_edge_feed_sees_edge_resistance(self):
        cfg = CavityConfig(modes=1, probe_reactance=False, q_fix=50.0)
        l = 30.0
        d_edge = DesignParams(l, 40.5, -l / 2 + 1e-7)
        f1 = resonant_freq_tm10(d_edge, SUB)
        z = input_impedance(d_edge, SUB, cfg, f1)
        from patchkit.cavity import _edge_resistance

        assert z.real == pytest.approx(_edge_resistance(40.5, f1), rel=1e-6)
        assert z.imag == pytest.approx(0.0, abs=1e-6)

    def test_center_feed_kills_dominant_mode(self):
        cfg = CavityConfig(modes=1, probe_reactance=False, q_fix=50.0)
        d = DesignParams(30.0, 40.5, -1e-9)
        f1 = resonant_freq_tm10(d, SUB)
        z = input_impedance(d, SUB, cfg, f1)
        assert abs(z) < 1e-10

    def test_purely_probe_reactance_at_resonance(self):
        cfg = CavityConfig(modes=1, probe_reactance=True, q_fix=80.0)
        f1 = resonant_freq_tm10(TABLE_DESIGN, SUB)
        z = input_impedance(TABLE_DESIGN, SUB, cfg, f1)
        expected_x = 2 * np.pi * f1 * cfg.probe_inductance_nh * (SUB.h / 1.61)
        assert z.imag == pytest.approx(expected_x, rel=1e-9)

    def test_rejects_nonpositive_frequency(self):
        with pytest.raises(ValueError, match="frequency"):
            input_impedance(TABLE_DESIGN, SUB, CavityConfig(), 0.0)

    def test_vectorized_matches_scalar(self):
        cfg = CavityConfig()
        freqs = np.array([1.0, 2.5, 7.0])
        vec = input_impedance(TABLE_DESIGN, SUB, cfg, freqs)
        for f, zv in zip(freqs, vec):
            assert zv == input_impedance(TABLE_DESIGN, SUB, cfg, float(f))


class TestDbConversion:
    def test_exact_decades(self):
        assert to_db(1.0) == 0.0
        assert to_db(0.1) == -20.0
        assert to_db(0.01) == -40.0

    def test_floor_clamp(self):
        assert to_db(0.0) == pytest.approx(20 * np.log10(1e-9))
        assert to_db(1e-30) == to_db(0.0)


class TestS11Curve:
    GRID = FrequencyGrid(1.0, 10.0, 500)

    def test_passive_curves_nonpositive(self):
        rng = np.random.default_rng(0)
        cfg = CavityConfig()
        for _ in range(20):
            l = rng.uniform(8, 50)
            d = DesignParams(l, rng.uniform(0.8, 2.0) * l, -rng.uniform(0.05, 0.45) * l)
            curve = s11_curve(d, SUB, cfg, self.GRID)
            assert np.all(curve.values <= 1e-12)
            assert np.all(np.isfinite(curve.values))

    def test_matched_load_hits_floor(self):
        # R_1 tuned to Z0, single mode, no probe: at resonance the
        # reflection magnitude collapses toward the clamp floor
        cfg = CavityConfig(modes=1, probe_reactance=False, q_fix=60.0)
        l, w = 30.0, 40.5
        p = feed_offset_for_match(l, w, SUB, cfg.z0)
        d = DesignParams(l, w, p)
        f1 = resonant_freq_tm10(d, SUB)
        z = input_impedance(d, SUB, cfg, f1)
        assert z.real == pytest.approx(cfg.z0, rel=1e-9)
        gamma = abs((z - cfg.z0) / (z + cfg.z0))
        assert to_db(gamma) <= -150.0

    def test_argmin_at_resonance_when_matched(self):
        cfg = CavityConfig(modes=1, probe_reactance=False, q_fix=60.0)
        rng = np.random.default_rng(7)
        hits = 0
        for _ in range(20):
            l = rng.uniform(12, 45)
            w = rng.uniform(0.9, 1.9) * l
            d0 = DesignParams(l, w, -l / 4)
            f1 = resonant_freq_tm10(d0, SUB)
            if not 1.1 <= f1 <= 9.9:
                continue
            p = feed_offset_for_match(l, w, SUB, cfg.z0)
            curve = s11_curve(DesignParams(l, w, p), SUB, cfg, self.GRID)
            f_min = curve.grid.points[np.argmin(curve.values)]
            assert abs(f_min - f1) <= curve.grid.step + 1e-12
            hits += 1
        assert hits >= 10

    def test_deterministic_and_pure(self):
        cfg = CavityConfig()
        a = s11_curve(TABLE_DESIGN, SUB, cfg, self.GRID)
        b = s11_curve(TABLE_DESIGN, SUB, cfg, self.GRID)
        np.testing.assert_array_equal(a.values, b.values)

    def test_rejects_infeasible(self):
        with pytest.raises(ValueError, match="infeasible"):
            s11_curve(DesignParams(30.0, 40.5, 2.0), SUB, CavityConfig(), self.GRID)

    def test_higher_modes_add_dips(self):
        # a long patch has harmonics inside the band: the 3-mode curve
        # must dip in the upper band where the 1-mode curve stays flat
        grid = FrequencyGrid(1.0, 10.0, 1000)
        l, w = 45.0, 50.0
        p = feed_offset_for_match(l, w, SUB)
        d = DesignParams(l, w, p)
        multi = s11_curve(d, SUB, CavityConfig(modes=3, probe_reactance=False), grid)
        single = s11_curve(d, SUB, CavityConfig(modes=1, probe_reactance=False), grid)
        f1 = resonant_freq_tm10(d, SUB)
        upper = grid.points > 1.5 * f1
        assert multi.values[upper].min() < single.values[upper].min() - 3.0


class TestResponseCurveType:
    def test_length_must_match_grid(self):
        with pytest.raises(ValueError, match="length"):
            ResponseCurve(np.zeros(7), FrequencyGrid(1, 10, 8))

    def test_rejects_nonfinite(self):
        values = np.zeros(10)
        values[3] = np.nan
        with pytest.raises(ValueError, match="finite"):
            ResponseCurve(values, FrequencyGrid(1, 10, 10))


class TestGridType:
    def test_default_grid_step_is_9mhz(self):
        grid = FrequencyGrid()
        assert grid.step == pytest.approx(0.009009, abs=1e-6)
        assert grid.points[0] == 1.0 and grid.points[-1] == 10.0

    def test_invariants(self):
        with pytest.raises(ValueError):
            FrequencyGrid(5.0, 5.0, 100)
        with pytest.raises(ValueError):
            FrequencyGrid(1.0, 10.0, 1)
        with pytest.raises(ValueError):
            Substrate(eps_r=0.9)
        with pytest.raises(ValueError):
            CavityConfig(modes=0)
