"""Kernel values against independent quadrature oracles and closed forms."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from clqg.dirichlet import Rect
from clqg.errors import DomainError
from clqg.kernels import (
    CutoffCovariance,
    FourierProfile,
    KernelSpec,
    assumption_report,
    cutoff_covariance,
    default_fourier_profile,
    mff_green,
    sandwich_constant,
    star_scale_kernel,
)


def gauss_refined(f, a, b, tol=1e-12):
    """Composite Gauss-Legendre with panel doubling until successive values agree.

    Independent of scipy.integrate; used as the oracle for the kernel quadratures.
    """
    nodes, weights = np.polynomial.legendre.leggauss(24)
    prev = None
    panels = 4
    for _ in range(14):
        edges = np.linspace(a, b, panels + 1)
        mid = 0.5 * (edges[1:] + edges[:-1])
        half = 0.5 * (edges[1:] - edges[:-1])
        x = mid[:, None] + half[:, None] * nodes[None, :]
        val = float((f(x) * weights[None, :] * half[:, None]).sum())
        if prev is not None and abs(val - prev) <= tol * max(1.0, abs(val)):
            return val
        prev = val
        panels *= 2
    return prev


def mff_green_oracle(r, m):
    # substitute u = (r/m) e^s: integrand becomes (1/2) e^{-m r cosh(s)}
    f = lambda s: 0.5 * np.exp(-m * r * np.cosh(s))
    return gauss_refined(f, -40.0, 40.0, tol=1e-12)


class TestMffGreen:
    def test_value_at_unit_args(self):
        # oracle: refined quadrature of the kernel integral, frozen here
        oracle = mff_green_oracle(1.0, 1.0)
        assert abs(oracle - 0.4210244382407083) < 1e-12
        assert mff_green(1.0, 1.0) == pytest.approx(oracle, rel=1e-8)

    def test_far_field_small_positive(self):
        v = mff_green(10.0, 1.0)
        assert 0.0 < v < 1e-4
        assert v == pytest.approx(mff_green_oracle(10.0, 1.0), rel=1e-8)

    def test_log_singularity_compensated(self):
        # G_m(r) + ln r stays bounded as r -> 0
        vals = [mff_green(r, 1.0) + math.log(r) for r in (1e-2, 1e-4, 1e-6)]
        assert max(vals) - min(vals) < 0.01
        assert all(abs(v) < 1.0 for v in vals)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            mff_green(0.0, 1.0)
        with pytest.raises(DomainError):
            mff_green(-1.0, 1.0)

    def test_bessel_cross_check(self):
        for r, m in [(0.5, 1.0), (2.0, 0.7), (0.05, 3.0)]:
            assert mff_green(r, m) == pytest.approx(float(special.k0(m * r)), rel=1e-8)


class TestStarScaleKernel:
    def test_at_origin_exact(self):
        assert star_scale_kernel(0.0, 1.0) == 1.0
        assert star_scale_kernel(np.zeros(2), 3.0) == 1.0

    def test_positive_below_one(self):
        v = star_scale_kernel(1.0, 1.0)
        oracle = gauss_refined(lambda v_: 0.5 * np.exp(-1.0 / (2.0 * v_) - v_ / 2.0), 1e-12, 80.0)
        assert v == pytest.approx(oracle, rel=1e-8)
        assert 0.0 < v < 1.0

    def test_even_in_z(self):
        for z in (0.3, 1.1, 2.7):
            a = star_scale_kernel(np.array([z, 0.0]), 1.0)
            b = star_scale_kernel(np.array([-z, 0.0]), 1.0)
            assert a == b


class TestCutoffCovariance:
    def test_diagonal_exact_log(self, mff_spec):
        x = np.array([0.3, 0.4])
        for eps in (0.5, 2.0**-6, 2.0**-10):
            assert cutoff_covariance(mff_spec, eps, x, x) == pytest.approx(math.log(1.0 / eps), rel=1e-12)

    def test_eps_one_is_zero(self, mff_spec):
        assert cutoff_covariance(mff_spec, 1.0, [0.0, 0.0], [0.3, 0.0]) == 0.0
        fspec = KernelSpec(family="FOURIER", mass=1.0)
        assert cutoff_covariance(fspec, 1.0, [0.0, 0.0], [0.3, 0.0]) == 0.0

    def test_near_diagonal_sandwich(self, mff_spec):
        # oracle value: refined quadrature of k_m(u r)/u over the cutoff range
        eps, r = 2.0**-10, 2.0**-11
        f = lambda u: u * r * special.k1(u * r) / u
        oracle = gauss_refined(f, 1.0, 1.0 / eps, tol=1e-11)
        window = Rect(0.0, 0.0, 1.0, 1.0)
        c = sandwich_constant(mff_spec, window, [2.0**-k for k in (4, 7, 10)])
        target = math.log(2.0**10)
        assert abs(oracle - target) <= c
        got = cutoff_covariance(mff_spec, eps, [0.5, 0.5], [0.5 + r, 0.5])
        assert got == pytest.approx(oracle, rel=1e-6)

    def test_symmetry(self, mff_spec):
        x, y = np.array([0.2, 0.7]), np.array([0.55, 0.1])
        a = cutoff_covariance(mff_spec, 0.01, x, y)
        b = cutoff_covariance(mff_spec, 0.01, y, x)
        assert a == pytest.approx(b, abs=1e-12)

    def test_monotone_in_eps_on_diagonal(self, mff_spec):
        x = np.array([0.1, 0.9])
        vals = [cutoff_covariance(mff_spec, eps, x, x) for eps in (0.5, 0.1, 0.02, 0.004)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    def test_eps_domain_error(self, mff_spec):
        with pytest.raises(DomainError):
            cutoff_covariance(mff_spec, 0.0, [0, 0], [0, 0])
        with pytest.raises(DomainError):
            cutoff_covariance(mff_spec, 1.5, [0, 0], [0, 0])

    def test_gff_outside_domain_error(self):
        spec = KernelSpec(family="GFF_DIRICHLET", domain=Rect(0, 0, 1, 1))
        with pytest.raises(DomainError):
            cutoff_covariance(spec, 0.1, [0.5, 0.5], [1.5, 0.5])

    def test_gff_matches_eigen_sum(self):
        # independent oracle: heavy eigenfunction expansion of pi int p_D
        rect = Rect(0.0, 0.0, 1.0, 1.0)
        spec = KernelSpec(family="GFF_DIRICHLET", domain=rect)
        x = np.array([0.5, 0.5])
        y = np.array([0.52, 0.47])
        eps = 2.0**-5
        n = np.arange(1, 1500)
        lam = (np.pi * n[:, None]) ** 2 + (np.pi * n[None, :]) ** 2
        w = (2.0 * np.pi / lam) * np.exp(-lam * eps**2 / 2.0)
        sx = np.sin(np.pi * n * x[0]) * np.sin(np.pi * n * y[0])
        sy = np.sin(np.pi * n * x[1]) * np.sin(np.pi * n * y[1])
        oracle = 4.0 * np.einsum("ij,i,j->", w, sx, sy)
        assert cutoff_covariance(spec, eps, x, y) == pytest.approx(float(oracle), rel=1e-6)

    def test_frozen_scale_object(self, mff_spec):
        cc = CutoffCovariance(spec=mff_spec, epsilon=0.125)
        x = np.array([0.4, 0.4])
        assert np.isfinite(cc(x, x))
        with pytest.raises(DomainError):
            CutoffCovariance(spec=mff_spec, epsilon=0.0)


@settings(max_examples=20, deadline=None)
@given(
    eps=st.sampled_from([0.5, 0.25, 0.0625]),
    rx=st.floats(-0.4, 0.4),
    ry=st.floats(-0.4, 0.4),
)
def test_cutoff_symmetry_property(eps, rx, ry):
    spec = KernelSpec(family="MFF", mass=1.0)
    x = np.array([0.5, 0.5])
    y = x + np.array([rx, ry])
    assert cutoff_covariance(spec, eps, x, y) == pytest.approx(
        cutoff_covariance(spec, eps, y, x), abs=1e-12
    )


class TestKernelSpecValidation:
    def test_mff_needs_positive_mass(self):
        with pytest.raises(DomainError):
            KernelSpec(family="MFF", mass=0.0)

    def test_gff_needs_domain(self):
        with pytest.raises(DomainError):
            KernelSpec(family="GFF_DIRICHLET")

    def test_degenerate_rectangle(self):
        with pytest.raises(DomainError):
            Rect(0, 0, 0, 1)

    def test_fourier_profile_tail_check(self):
        u = np.geomspace(0.01, 1e4, 200)
        with pytest.raises(DomainError):
            FourierProfile(u=tuple(u), phi=tuple(2.0 / u**2))  # u^2 phi -> 2

    def test_fourier_profile_negative_lobe_rejected_by_spec(self):
        u = np.geomspace(0.01, 1e4, 200)
        phi = 1.0 / (u**2 + 1.0)
        phi[50:60] *= -1.0
        with pytest.raises(DomainError):
            KernelSpec(family="FOURIER", fourier_profile=FourierProfile(u=tuple(u), phi=tuple(phi)))


class TestAssumptionReport:
    def test_mff_all_pass(self, mff_spec):
        rep = assumption_report(mff_spec, Rect(0, 0, 1, 1), [2.0**-k for k in range(1, 7)])
        for a in ("A.1", "A.2", "A.3", "A.4", "A.5"):
            assert rep.verdict(a) == "PASS", a
        assert rep.all_pass

    def test_gff_subwindow_all_pass(self):
        spec = KernelSpec(family="GFF_DIRICHLET", domain=Rect(0, 0, 1, 1))
        rep = assumption_report(spec, Rect(0.25, 0.25, 0.75, 0.75), [2.0**-k for k in range(1, 6)])
        for a in ("A.1", "A.2", "A.3", "A.4", "A.5"):
            assert rep.verdict(a) == "PASS", a

    def test_corrupted_profile_fails_a1(self):
        u = np.geomspace(0.01, 1e4, 300)
        phi = 1.0 / (u**2 + 1.0)
        lobe = (u > 2.0) & (u < 4.0)
        phi[lobe] = -0.05
        profile = FourierProfile.__new__(FourierProfile)
        object.__setattr__(profile, "u", tuple(u))
        object.__setattr__(profile, "phi", tuple(phi))
        object.__setattr__(profile, "tail_tol", 0.05)
        spec = KernelSpec.__new__(KernelSpec)
        object.__setattr__(spec, "family", "FOURIER")
        object.__setattr__(spec, "mass", 1.0)
        object.__setattr__(spec, "domain", None)
        object.__setattr__(spec, "fourier_profile", profile)
        rep = assumption_report(spec, Rect(0, 0, 1, 1), [0.5, 0.25, 0.125])
        assert rep.verdict("A.1") == "FAIL"

    def test_csv_round_trip(self, mff_spec, tmp_path):
        rep = assumption_report(mff_spec, Rect(0, 0, 1, 1), [0.5, 0.25])
        path = tmp_path / "assumptions.csv"
        rep.to_csv(path)
        text = path.read_text().splitlines()
        assert text[0] == "assumption,statistic,tolerance,verdict"
        assert len(text) == 1 + len(rep.rows)


def test_default_profile_tail():
    prof = default_fourier_profile(mass=1.0)
    u = np.array([1e4, 5e4])
    assert np.allclose(u**2 * prof(u), 1.0, rtol=0.01)
