import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from throwcatch.mie import mie_solve
from throwcatch.model import ParticleSpec
from throwcatch.special import (MAX_ORDER, NumericalError, bessel_j, fourier_coefficients,
                                fourier_sample_count, gauss_legendre, integrate, make_rng)


def series_j(n, x, digits=40):
    """Ascending series for J_n(x) in extended precision, summed until terms vanish."""
    with mpmath.workdps(digits):
        x = mpmath.mpf(x)
        half = x / 2
        term = half**n / mpmath.factorial(n)
        total = term
        k = 0
        while abs(term) > mpmath.mpf(10) ** (-digits + 5):
            k += 1
            term *= -half**2 / (k * (k + n))
            total += term
        return float(total)


class TestBessel:
    def test_trivial_values(self):
        assert bessel_j(0, 0.0) == 1.0
        assert bessel_j(1, 0.0) == 0.0

    def test_j1_half_pi_against_series(self):
        assert abs(bessel_j(1, math.pi / 2) - series_j(1, math.pi / 2)) < 1e-14

    @given(st.integers(0, 40), st.floats(0.0, 30.0))
    def test_matches_series(self, n, x):
        assert abs(bessel_j(n, x) - series_j(n, x, 60)) <= 1e-12

    @given(st.integers(0, 200), st.floats(30.0, 1e4))
    def test_large_argument_against_mpmath(self, n, x):
        ref = float(mpmath.besselj(n, x))
        assert abs(bessel_j(n, x) - ref) <= 1e-12

    @given(st.integers(1, 60), st.floats(-100, 100))
    def test_negative_order_reflection(self, n, x):
        assert bessel_j(-n, x) == pytest.approx((-1) ** n * bessel_j(n, x), abs=1e-15)

    @given(st.integers(1, 30), st.floats(0.1, 50.0))
    def test_recurrence(self, n, x):
        lhs = bessel_j(n - 1, x) + bessel_j(n + 1, x)
        assert abs(lhs - 2 * n / x * bessel_j(n, x)) < 1e-9

    def test_arrays_broadcast(self):
        out = bessel_j(np.arange(3)[:, None], np.array([0.0, 1.0]))
        assert out.shape == (3, 2)

    @pytest.mark.parametrize("n, x", [(MAX_ORDER + 1, 1.0), (0, 1.5e4), (0, float("nan")), (0.5, 1.0)])
    def test_domain_errors(self, n, x):
        with pytest.raises(ValueError):
            bessel_j(n, x)


class TestFourier:
    def test_constant_kernel(self):
        c = fourier_coefficients(lambda x: np.ones_like(x), 2.0, 5)
        assert c[0] == pytest.approx(1.0, abs=1e-15)
        assert np.max(np.abs(np.delete(c.coefficients, 5))) < 1e-15

    def test_single_harmonic(self):
        c = fourier_coefficients(lambda x: np.cos(2 * np.pi * x / 3.0), 3.0, 4)
        assert c[1] == pytest.approx(0.5, abs=1e-14)
        assert c[-1] == pytest.approx(0.5, abs=1e-14)
        assert abs(c[2]) < 1e-14

    def test_jacobi_anger(self):
        phi0, d = math.pi / 2, 1.0
        c = fourier_coefficients(lambda x: np.exp(1j * phi0 * np.cos(np.pi * x / d) ** 2), d, 12)
        for n in range(-12, 13):
            expect = np.exp(1j * phi0 / 2) * 1j**n * bessel_j(n, phi0 / 2)
            assert abs(c[n] - expect) < 1e-10

    @given(st.lists(st.floats(-1, 1), min_size=2, max_size=12), st.lists(st.floats(-1, 1), min_size=2, max_size=12))
    def test_real_kernel_is_hermitian(self, a, b):
        def kernel(x):
            return sum(ak * np.cos(2 * np.pi * k * x) + bk * np.sin(2 * np.pi * k * x)
                       for k, (ak, bk) in enumerate(zip(a, b)))

        c = fourier_coefficients(kernel, 1.0, 15, samples=256)
        assert np.allclose(c.coefficients, np.conj(c.coefficients[::-1]), atol=1e-13)

    @given(st.lists(st.complex_numbers(max_magnitude=2), min_size=1, max_size=9))
    def test_parseval(self, cs):
        ks = np.arange(len(cs)) - len(cs) // 2

        def kernel(x):
            return sum(c * np.exp(2j * np.pi * k * x) for c, k in zip(cs, ks))

        spec = fourier_coefficients(kernel, 1.0, 10, samples=512)
        x = np.arange(4096) / 4096
        mean_sq = np.mean(np.abs(kernel(x)) ** 2)
        assert np.sum(np.abs(spec.coefficients) ** 2) == pytest.approx(mean_sq, rel=1e-8, abs=1e-12)

    def test_modulus_bound(self):
        c = fourier_coefficients(lambda x: 0.7 * np.exp(3j * np.sin(2 * np.pi * x)), 1.0, 20)
        assert np.max(np.abs(c.coefficients)) <= 0.7 + 1e-14

    def test_non_finite_kernel_reports_position(self):
        def kernel(x):
            return np.where(x >= 0.5, np.inf, 1.0)

        with pytest.raises(NumericalError, match="x = 0.5"):
            fourier_coefficients(kernel, 1.0, 3, samples=64)

    @given(st.integers(1, 200), st.floats(0, 500))
    def test_sample_rule(self, n, bw):
        m = fourier_sample_count(n, bw)
        assert m & (m - 1) == 0
        assert m >= 2 * (n + bw) + 64


class TestIntegrate:
    def test_sin(self):
        value, err = integrate(math.sin, 0.0, math.pi)
        assert value == pytest.approx(2.0, abs=1e-12) and err <= 1e-9

    def test_square(self):
        assert integrate(lambda x: x * x, 0.0, 1.0)[0] == pytest.approx(1 / 3, abs=1e-14)

    def test_mie_angular_intensity_against_dense_trapezoid(self):
        sol = mie_solve(ParticleSpec.from_radius(2.78e-8), 213e-9)

        def intensity(mu):
            s1, s2 = sol.amplitudes(np.arccos(np.clip(mu, -1, 1)))
            return 0.5 * (np.abs(s1) ** 2 + np.abs(s2) ** 2)

        value, _ = integrate(lambda m: float(intensity(np.array([m]))[0]), -1.0, 1.0, tol=1e-12)
        mu = np.linspace(-1.0, 1.0, 1_000_001)
        y = intensity(mu)
        oracle = (mu[1] - mu[0]) * (y.sum() - 0.5 * (y[0] + y[-1]))
        assert value == pytest.approx(oracle, rel=1e-8)

    def test_gauss_legendre_exact_for_polynomials(self):
        x, w = gauss_legendre(6, 0.0, 2.0)
        assert np.sum(w * x**11) == pytest.approx(2.0**12 / 12, rel=1e-13)


def test_rng_contract():
    assert np.array_equal(make_rng(7).normal(size=5), make_rng(7).normal(size=5))
    assert not np.array_equal(make_rng(7).normal(size=5), make_rng(8).normal(size=5))
    with pytest.raises(ValueError):
        make_rng(None)
