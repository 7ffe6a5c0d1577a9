"""Brownian paths, clock integrals, inversion, and ladder maxima."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clqg.clock import (
    SQRT_2_OVER_PI,
    clock_derivative,
    clock_raw,
    clock_value_at,
    invert_clock,
    path_max_statistic,
    seneta_heyde_clock_ratio,
    simulate_bm,
)
from clqg.errors import DomainError, HorizonExceededError
from clqg.field import GridSpec, ScaleLadder, sample_field_ladder
from clqg.kernels import KernelSpec

from conftest import make_constant_ladder

LN2 = np.log(2.0)


class TestSimulateBm:
    def test_deterministic(self):
        a = simulate_bm([0.1, 0.2], 0.01, 1e-4, seed=5)
        b = simulate_bm([0.1, 0.2], 0.01, 1e-4, seed=5)
        assert np.array_equal(a.positions, b.positions)

    def test_single_step_variance(self):
        dt = 2e-3
        vals = np.array([simulate_bm([0, 0], dt, dt, seed=r).positions[-1] for r in range(3000)])
        var = vals.var(axis=0, ddof=1)
        se = dt * np.sqrt(2.0 / 2999)
        assert abs(var[0] - dt) < 5 * se and abs(var[1] - dt) < 5 * se

    def test_mean_square_displacement(self):
        # E|B_T - x|^2 = 2T for the planar motion
        T, dt = 0.05, 1e-3
        d2 = np.empty(4000)
        for r in range(4000):
            p = simulate_bm([1.0, -2.0], T, dt, seed=10_000 + r)
            d2[r] = ((p.positions[-1] - p.positions[0]) ** 2).sum()
        se = d2.std(ddof=1) / np.sqrt(len(d2))
        assert abs(d2.mean() - 2 * T) < 5 * se

    def test_validation(self):
        with pytest.raises(DomainError):
            simulate_bm([0, 0], 0.0, 1e-3, seed=1)


class TestClockOnSyntheticFields:
    def test_raw_constant_field(self):
        # X = c, sigma^2 = s: F_raw(T) = e^{2c - 2s} T
        c, s = 0.7, 1.1
        fl = make_constant_ladder(nx=16, J=2, value=c, var=s)
        bm = simulate_bm([0.5, 0.5], 0.001, 1e-5, seed=3)
        cp = clock_raw(fl, bm, 2)
        assert cp.F_raw[-1] == pytest.approx(np.exp(2 * c - 2 * s) * bm.T, rel=1e-12)

    def test_derivative_constant_field(self):
        # F_der(T) = (2s - 2c + beta) e^{2c-2s} T with the barrier intact
        c, s, beta = 0.2, 1.5, 4.0
        fl = make_constant_ladder(nx=16, J=2, value=c, var=s)
        bm = simulate_bm([0.5, 0.5], 0.001, 1e-5, seed=3)
        cp = clock_derivative(fl, bm, 2, beta=beta)
        expect = (2 * s - c + beta) * np.exp(2 * c - 2 * s) * bm.T
        assert cp.F_der[-1] == pytest.approx(expect, rel=1e-12)
        assert cp.F_der[0] == 0.0
        assert np.all(np.diff(cp.F_der) >= 0)

    def test_truncated_minus_tilde_bound(self, small_mff_ladder):
        # |F'_beta - F~'_beta| = beta * sum of surviving raw increments <= beta F_raw
        bm = simulate_bm([0.5, 0.5], 0.002, small_mff_ladder.grid.dx**2 / 4, seed=11)
        for beta in (0.5, 2.0, 15.0):
            cp = clock_derivative(small_mff_ladder, bm, 5, beta=beta, escalate=False)
            gap = np.abs(cp.F_der - cp.F_der_tilde)
            assert np.all(gap <= beta * cp.F_raw + 1e-15)

    def test_fixed_path_raw_martingale_mean(self, mff_spec):
        # E_X[F_raw(T)] = T at every scale under exact variance
        grid = GridSpec(nx=32, ny=32)
        lad = ScaleLadder(J=4)
        bm = simulate_bm([0.5, 0.5], 0.002, grid.dx**2 / 4, seed=21)
        R = 600
        vals = np.empty((R, 4))
        for r in range(R):
            fl = sample_field_ladder(mff_spec, grid, lad, seed=30_000 + r)
            for j in range(1, 5):
                vals[r, j - 1] = clock_raw(fl, bm, j).F_raw[-1]
        for j in range(4):
            se = vals[:, j].std(ddof=1) / np.sqrt(R)
            assert abs(vals[:, j].mean() - bm.T) < 5 * se, f"scale {j+1}"

    def test_fixed_path_truncated_mean_beta_T(self, mff_spec):
        grid = GridSpec(nx=32, ny=32)
        lad = ScaleLadder(J=3)
        beta = 2.0
        bm = simulate_bm([0.5, 0.5], 0.002, grid.dx**2 / 4, seed=23)
        R = 600
        vals = np.empty(R)
        for r in range(R):
            fl = sample_field_ladder(mff_spec, grid, lad, seed=60_000 + r)
            vals[r] = clock_derivative(fl, bm, 3, beta=beta, escalate=False).F_der[-1]
        se = vals.std(ddof=1) / np.sqrt(R)
        assert abs(vals.mean() - beta * bm.T) < 5 * se

    def test_raw_median_vanishes_along_ladder(self, mff_spec):
        grid = GridSpec(nx=64, ny=64)
        lad = ScaleLadder(J=6)
        bm = simulate_bm([0.5, 0.5], 0.002, grid.dx**2 / 4, seed=29)
        R = 200
        vals = np.empty((R, 6))
        for r in range(R):
            fl = sample_field_ladder(mff_spec, grid, lad, seed=90_000 + r)
            for j in range(1, 7):
                vals[r, j - 1] = clock_raw(fl, bm, j).F_raw[-1]
        med = np.median(vals, axis=0)
        assert np.all(np.diff(med) < 0)

    def test_additivity_exact(self, small_mff_ladder):
        bm = simulate_bm([0.5, 0.5], 0.002, small_mff_ladder.grid.dx**2 / 4, seed=31)
        cp = clock_derivative(small_mff_ladder, bm, 4, beta=15.0)
        k = bm.K // 3
        tail = clock_derivative(small_mff_ladder, bm.shifted(k), 4, beta=15.0)
        total = cp.F_der[k] + tail.F_der[-1]
        assert total == pytest.approx(cp.F_der[-1], rel=1e-12)

    def test_exit_truncation_flag(self, small_mff_ladder):
        # a long path escapes the unit window; increments past the exit vanish
        bm = simulate_bm([0.98, 0.5], 0.5, 1e-3, seed=37)
        cp = clock_raw(small_mff_ladder, bm, 3)
        assert cp.exited and cp.exit_index is not None
        after = np.diff(cp.F_raw)[cp.exit_index :]
        assert np.all(after == 0.0)

    def test_barrier_escalation(self, small_mff_ladder):
        bm = simulate_bm([0.5, 0.5], 0.001, small_mff_ladder.grid.dx**2 / 4, seed=41)
        g = small_mff_ladder.barrier_running_max(5)
        tiny_beta = 1e-6
        cp = clock_derivative(small_mff_ladder, bm, 5, beta=tiny_beta, escalate=True)
        assert cp.beta >= tiny_beta
        assert np.all(cp.barrier_ok)


class TestInvertClock:
    def test_zero_maps_to_zero(self, small_mff_ladder):
        bm = simulate_bm([0.5, 0.5], 0.001, small_mff_ladder.grid.dx**2 / 4, seed=43)
        cp = clock_derivative(small_mff_ladder, bm, 4, beta=15.0)
        assert invert_clock(cp, 0.0) == 0.0

    def test_linear_clock_closed_form(self):
        # F(s) = a s  ->  s = t / (a sqrt(2/pi))
        c, s, beta = 0.0, 1.0, 3.0
        fl = make_constant_ladder(nx=16, J=1, value=c, var=s)
        bm = simulate_bm([0.5, 0.5], 0.001, 1e-5, seed=47)
        cp = clock_derivative(fl, bm, 1, beta=beta)
        a = (2 * s + beta) * np.exp(-2 * s)
        t = 0.3 * SQRT_2_OVER_PI * cp.F_der[-1]
        assert invert_clock(cp, t) == pytest.approx(t / (a * SQRT_2_OVER_PI), rel=1e-12)

    def test_round_trip(self, small_mff_ladder):
        bm = simulate_bm([0.5, 0.5], 0.002, small_mff_ladder.grid.dx**2 / 4, seed=53)
        cp = clock_derivative(small_mff_ladder, bm, 5, beta=15.0)
        top = SQRT_2_OVER_PI * cp.F_der[-1]
        rng = np.random.default_rng(7)
        for t in rng.uniform(0.0, top, size=100):
            s = invert_clock(cp, t)
            assert abs(SQRT_2_OVER_PI * clock_value_at(cp, s) - t) < 1e-9

    def test_horizon_error(self, small_mff_ladder):
        bm = simulate_bm([0.5, 0.5], 0.001, small_mff_ladder.grid.dx**2 / 4, seed=59)
        cp = clock_derivative(small_mff_ladder, bm, 4, beta=15.0)
        with pytest.raises(HorizonExceededError):
            invert_clock(cp, SQRT_2_OVER_PI * cp.F_der[-1] * 1.01)


@settings(max_examples=30, deadline=None)
@given(frac=st.floats(0.0, 1.0))
def test_invert_round_trip_property(frac):
    fl = make_constant_ladder(nx=8, J=1, value=0.3, var=0.9)
    bm = simulate_bm([0.5, 0.5], 0.0005, 1e-5, seed=61)
    cp = clock_derivative(fl, bm, 1, beta=2.0)
    t = frac * SQRT_2_OVER_PI * cp.F_der[-1]
    s = invert_clock(cp, t)
    assert abs(SQRT_2_OVER_PI * clock_value_at(cp, s) - t) <= 1e-9 * max(1.0, t)


class TestSenetaHeydeClockRatio:
    def test_constant_field_plug_in(self):
        # degenerate input: ratio = sqrt(s) e^{2c-2s} T / ((2s - 2c... ) e^{..} T)
        c, s = 0.4, 2.0
        fl = make_constant_ladder(nx=16, J=2, value=c, var=s)
        bm = simulate_bm([0.5, 0.5], 0.001, 1e-5, seed=67)
        raw = clock_raw(fl, bm, 2).F_raw[-1]
        unt = clock_derivative(fl, bm, 2, beta=0.0, escalate=False).F_der_untruncated[-1]
        assert np.sqrt(s) * raw / unt == pytest.approx(np.sqrt(s) / (2 * s - c), rel=1e-12)

    def test_ratio_sequence_runs(self):
        spec = KernelSpec(family="MFF", mass=4.0)
        grid = GridSpec(nx=32, ny=32)
        lad = ScaleLadder(J=4)
        bm = simulate_bm([0.5, 0.5], 0.004, grid.dx**2 / 4, seed=71)
        out = seneta_heyde_clock_ratio(spec, grid, lad, bm, n_replicas=60, seed=4)
        assert out["target"] == pytest.approx(SQRT_2_OVER_PI)
        assert np.isfinite(out["medians"][1:]).all()
        assert out["warning"] is None

    def test_replica_floor(self, small_mff_ladder):
        bm = simulate_bm([0.5, 0.5], 0.001, 1e-5, seed=73)
        with pytest.raises(DomainError):
            seneta_heyde_clock_ratio(
                small_mff_ladder.spec, small_mff_ladder.grid, small_mff_ladder.ladder, bm, 10, seed=1
            )


class TestPathMaxStatistic:
    def test_zero_field_closed_form(self):
        fl = make_constant_ladder(nx=16, J=3, value=0.0)
        bm = simulate_bm([0.5, 0.5], 0.001, 1e-5, seed=79)
        out = path_max_statistic(fl, bm, a_values=(0.1,))
        for j in range(1, 4):
            s2 = j * LN2
            assert out["max_table"][0.1][j] == pytest.approx(-2 * s2 + 0.1 * np.log(s2), rel=1e-12)
        # the statistic decreases in j for the zero field
        tab = out["max_table"][0.1][1:]
        assert np.all(np.diff(tab) < 0)

    def test_monotone_in_a_when_variance_large(self):
        fl = make_constant_ladder(nx=16, J=2, value=0.0, var=1.7)
        bm = simulate_bm([0.5, 0.5], 0.001, 1e-5, seed=83)
        out = path_max_statistic(fl, bm, a_values=(0.0, 0.1))
        assert out["max_table"][0.0][2] <= out["max_table"][0.1][2]
