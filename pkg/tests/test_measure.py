"""Measure kinds: plug-in identities, martingale means, truncation structure."""

import numpy as np
import pytest

from clqg.errors import DomainError
from clqg.field import GridSpec, ScaleLadder, sample_field_ladder
from clqg.kernels import KernelSpec
from clqg.measure import (
    derivative_measure,
    measure_of_ball,
    seneta_heyde_measure,
    truncated_measure,
)

from conftest import make_constant_ladder

LN2 = np.log(2.0)


class TestPlugInValues:
    def test_seneta_heyde_zero_field(self):
        # X = 0, sigma^2 = j ln 2: mass(A) = sqrt(ln 2^j) 4^{-j} |A|
        fl = make_constant_ladder(nx=16, J=3, value=0.0)
        m = seneta_heyde_measure(fl, 3)
        expect = np.sqrt(3 * LN2) * np.exp(-2 * 3 * LN2)
        assert m.total == pytest.approx(expect, rel=1e-12)
        assert m.total == pytest.approx(np.sqrt(np.log(2.0**3)) * 4.0**-3, rel=1e-12)

    def test_derivative_zero_field(self):
        fl = make_constant_ladder(nx=16, J=3, value=0.0)
        m = derivative_measure(fl, 2)
        s2 = 2 * LN2
        assert m.total == pytest.approx(2 * s2 * np.exp(-2 * s2), rel=1e-12)

    def test_truncated_zero_field_beta_zero(self):
        # max_i (X_i - 2 sigma^2_i) = -2 sigma^2 <= 0: the indicator passes
        fl = make_constant_ladder(nx=16, J=3, value=0.0)
        m = truncated_measure(fl, 3, 0.0)
        s2 = 3 * LN2
        assert m.total == pytest.approx(2 * s2 * np.exp(-2 * s2), rel=1e-12)

    def test_scale_zero_rejected(self, small_mff_ladder):
        for fn in (seneta_heyde_measure, derivative_measure):
            with pytest.raises(DomainError):
                fn(small_mff_ladder, 0)
        with pytest.raises(DomainError):
            truncated_measure(small_mff_ladder, 0, 1.0)
        with pytest.raises(DomainError):
            truncated_measure(small_mff_ladder, 1, -0.5)


class TestMartingaleMeans:
    def test_seneta_heyde_mean(self, mff_spec):
        # E[mass(A)] = sqrt(sigma^2_j) |A| under exact variance
        grid = GridSpec(nx=32, ny=32)
        lad = ScaleLadder(J=4)
        R = 400
        tot = np.empty(R)
        for r in range(R):
            fl = sample_field_ladder(mff_spec, grid, lad, seed=3000 + r)
            tot[r] = seneta_heyde_measure(fl, 4).total
        expect = np.sqrt(fl.variance_scalar(4))
        se = tot.std(ddof=1) / np.sqrt(R)
        assert abs(tot.mean() - expect) < 5 * se

    def test_derivative_zero_mean_every_scale(self):
        # mass 4 gives the unit window ~16 coarse correlation cells; with one
        # cell (mass 1) the zero mean holds but its negative tail is too rare
        # to sample at this replica count
        spec = KernelSpec(family="MFF", mass=4.0)
        grid = GridSpec(nx=32, ny=32)
        lad = ScaleLadder(J=4)
        R = 400
        tot = np.empty((R, 4))
        for r in range(R):
            fl = sample_field_ladder(spec, grid, lad, seed=4000 + r)
            for j in range(1, 5):
                tot[r, j - 1] = derivative_measure(fl, j).total
        for j in range(4):
            se = tot[:, j].std(ddof=1) / np.sqrt(R)
            assert abs(tot[:, j].mean()) < 4 * se, f"scale {j+1}"

    def test_truncated_mean_is_beta(self, mff_spec):
        grid = GridSpec(nx=32, ny=32)
        lad = ScaleLadder(J=4)
        beta = 3.0
        R = 500
        tot = np.empty(R)
        for r in range(R):
            fl = sample_field_ladder(mff_spec, grid, lad, seed=8000 + r)
            tot[r] = truncated_measure(fl, 4, beta).total
        se = tot.std(ddof=1) / np.sqrt(R)
        assert abs(tot.mean() - beta) < 5 * se


class TestTruncationStructure:
    def test_truncation_consistency_identity(self, small_mff_ladder):
        # where the barrier passes: T(beta) = D + beta * e-weight; else 0
        fl = small_mff_ladder
        j, beta = 5, 2.0
        tr = truncated_measure(fl, j, beta)
        dv = derivative_measure(fl, j)
        w = np.exp(2 * fl.fields[j] - 2 * np.asarray(fl.variances[j])) * fl.grid.cell_area
        keep = fl.barrier_running_max(j) <= beta
        lhs = np.asarray(tr.masses)
        rhs = np.where(keep, np.asarray(dv.masses) + beta * w, 0.0)
        assert np.allclose(lhs, rhs, rtol=0, atol=1e-15)

    def test_beta_above_running_max_keeps_all(self, small_mff_ladder):
        fl = small_mff_ladder
        j = 5
        beta = float(fl.barrier_running_max(j).max()) + 1.0
        tr = truncated_measure(fl, j, beta)
        assert np.all(np.asarray(tr.masses) > 0)

    def test_beta_term_vanishes_along_ladder(self, mff_spec):
        # T(beta) - D = beta * raw mass on surviving cells; the raw mass has a
        # decreasing median along the ladder (the Seneta-Heyde factor collapse)
        grid = GridSpec(nx=32, ny=32)
        lad = ScaleLadder(J=5)
        R = 150
        gaps = np.empty((R, 5))
        for r in range(R):
            fl = sample_field_ladder(mff_spec, grid, lad, seed=12000 + r)
            for j in range(1, 6):
                w = np.exp(2 * fl.fields[j] - 2 * np.asarray(fl.variances[j])).sum() * fl.grid.cell_area
                gaps[r, j - 1] = w
        med = np.median(gaps, axis=0)
        assert np.all(np.diff(med) < 0)

    def test_positivity_emergence(self, mff_spec):
        # the fraction of replicas with negative derivative mass decreases
        grid = GridSpec(nx=32, ny=32)
        lad = ScaleLadder(J=5)
        R = 400
        neg = np.zeros((R, 2))
        for r in range(R):
            fl = sample_field_ladder(mff_spec, grid, lad, seed=15000 + r)
            neg[r, 0] = derivative_measure(fl, 1).total < 0
            neg[r, 1] = derivative_measure(fl, 5).total < 0
        assert neg[:, 1].mean() <= neg[:, 0].mean()

    def test_cauchy_trend_of_derivative_mass(self, mff_spec):
        # |mass_J - mass_{J-1}| has decreasing medians over replicas
        grid = GridSpec(nx=32, ny=32)
        lad = ScaleLadder(J=5)
        R = 250
        diffs = np.empty((R, 4))
        for r in range(R):
            fl = sample_field_ladder(mff_spec, grid, lad, seed=17000 + r)
            tots = [derivative_measure(fl, j).total for j in range(1, 6)]
            diffs[r] = np.abs(np.diff(tots))
        med = np.median(diffs, axis=0)
        assert med[-1] < med[0]


class TestMeasureOfBall:
    def test_full_window(self, small_mff_ladder):
        tr = truncated_measure(small_mff_ladder, 5, 15.0)
        assert measure_of_ball(tr, [0.5, 0.5], 10.0) == pytest.approx(tr.total, rel=1e-12)

    def test_single_cell(self, small_mff_ladder):
        tr = truncated_measure(small_mff_ladder, 5, 15.0)
        grid = small_mff_ladder.grid
        xs, ys = grid.centers()
        got = measure_of_ball(tr, [xs[7], ys[9]], grid.dx / 2.01)
        assert got == pytest.approx(float(np.asarray(tr.masses)[9, 7]), rel=1e-12)

    def test_nested_monotonicity(self, small_mff_ladder):
        tr = truncated_measure(small_mff_ladder, 5, 15.0)
        vals = [measure_of_ball(tr, [0.4, 0.6], r) for r in (0.05, 0.1, 0.2, 0.4)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_radius_validation(self, small_mff_ladder):
        tr = truncated_measure(small_mff_ladder, 5, 15.0)
        with pytest.raises(DomainError):
            measure_of_ball(tr, [0.5, 0.5], 0.0)


def test_non_atomicity_proxy(mff_spec):
    # max single-cell share of the total mass shrinks as the grid refines
    lad_coarse = ScaleLadder(J=4)
    lad_fine = ScaleLadder(J=6)
    shares = {"coarse": [], "fine": []}
    for r in range(60):
        fc = sample_field_ladder(mff_spec, GridSpec(nx=16, ny=16), lad_coarse, seed=500 + r)
        ff = sample_field_ladder(mff_spec, GridSpec(nx=64, ny=64), lad_fine, seed=500 + r)
        tc = truncated_measure(fc, 4, 15.0)
        tf = truncated_measure(ff, 6, 15.0)
        shares["coarse"].append(np.asarray(tc.masses).max() / tc.total)
        shares["fine"].append(np.asarray(tf.masses).max() / tf.total)
    assert np.median(shares["fine"]) < np.median(shares["coarse"])
