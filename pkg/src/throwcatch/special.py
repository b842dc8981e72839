"""Numerical kernels: Bessel functions, quadrature, Fourier coefficients, RNG."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate as _integrate
from scipy import special as _sp

MAX_ORDER = 200
MAX_ARG = 1e4
DEFAULT_FOURIER_SAMPLES = 2**14


class NumericalError(ArithmeticError):
    """A numerical routine failed to reach its accuracy contract."""


def bessel_j(n, x):
    """Bessel function of the first kind for integer order.

    Accepts scalars or broadcastable arrays. Orders are limited to
    ``|n| <= 200`` and arguments to ``|x| <= 1e4``.
    """
    n_arr = np.asarray(n)
    x_arr = np.asarray(x, dtype=float)
    if not np.all(np.equal(np.mod(n_arr, 1), 0)):
        raise ValueError("bessel_j: order must be an integer")
    if np.any(np.abs(n_arr) > MAX_ORDER):
        raise ValueError(f"bessel_j: |n| > {MAX_ORDER} is outside the supported range")
    if np.any(~np.isfinite(x_arr)) or np.any(np.abs(x_arr) > MAX_ARG):
        raise ValueError(f"bessel_j: |x| > {MAX_ARG:g} is outside the supported range")
    out = _sp.jv(n_arr.astype(float), x_arr)
    if np.ndim(out) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class FourierSpectrum:
    """Fourier coefficients ``c_n`` for ``n = -N..N`` of a periodic function."""

    orders: np.ndarray
    coefficients: np.ndarray
    period: float

    def __getitem__(self, n):
        n = int(n)
        n_max = int(self.orders[-1])
        if abs(n) > n_max:
            raise KeyError(n)
        return self.coefficients[n + n_max]

    @property
    def n_max(self):
        return int(self.orders[-1])

    def as_dict(self):
        return {int(n): complex(c) for n, c in zip(self.orders, self.coefficients)}

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        phase = 2j * np.pi * np.multiply.outer(x, self.orders) / self.period
        return np.exp(phase) @ self.coefficients


def fourier_sample_count(n_max, bandwidth=0.0):
    """Samples per period for extracting orders up to ``n_max``.

    A kernel whose spectrum is negligible beyond ``bandwidth`` harmonics is
    sampled at the next power of two above ``2 * (n_max + bandwidth) + 64``.
    Orders up to ``n_max`` then only alias with harmonics beyond
    ``n_max + bandwidth + 64``, which are far below double precision for the
    Bessel-type spectra produced by phase gratings.
    """
    need = 2 * (int(n_max) + int(np.ceil(bandwidth))) + 64
    return int(2 ** int(np.ceil(np.log2(max(need, 64)))))


def fourier_coefficients(kernel, period, n_max, samples=DEFAULT_FOURIER_SAMPLES):
    """Fourier coefficients of a periodic (possibly complex) kernel.

    ``c_n = (1/period) * integral_0^period kernel(x) exp(-2 pi i n x / period) dx``
    evaluated with the uniform-grid rectangle rule, which is spectrally
    accurate for smooth periodic integrands.

    Parameters
    ----------
    kernel : callable
        Vectorised function of position.
    period : float
    n_max : int
        Highest order returned; must be at least 1.
    samples : int
        Grid points per period. Must exceed ``2 * n_max``.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if samples <= 2 * n_max:
        raise ValueError("samples must exceed 2 * n_max")
    x = np.arange(samples) * (period / samples)
    values = np.asarray(kernel(x), dtype=complex)
    if values.shape != x.shape:
        values = np.broadcast_to(values, x.shape).astype(complex)
    bad = ~np.isfinite(values)
    if np.any(bad):
        raise NumericalError(f"kernel is not finite at x = {float(x[np.argmax(bad)])!r}")
    spectrum = np.fft.fft(values) / samples
    orders = np.arange(-n_max, n_max + 1)
    return FourierSpectrum(orders=orders, coefficients=spectrum[orders % samples], period=period)


def fourier_coefficients_batch(values, orders):
    """Pick order ``orders[j]`` of the j-th column of uniformly sampled kernels.

    ``values`` has shape ``(samples, len(orders))``; each column holds one
    period of a different kernel.
    """
    samples = values.shape[0]
    if not np.all(np.isfinite(values)):
        raise NumericalError("kernel samples are not finite")
    spectrum = np.fft.fft(values, axis=0) / samples
    idx = np.asarray(orders) % samples
    return spectrum[idx, np.arange(values.shape[1])]


def integrate(f, a, b, tol=1e-9, limit=200):
    """Adaptive Gauss-Kronrod quadrature; returns ``(value, error_bound)``.

    Raises :class:`NumericalError` if the error estimate stays above ``tol``
    after ``limit`` subdivisions.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", _integrate.IntegrationWarning)
        value, err = _integrate.quad(f, a, b, epsabs=tol, epsrel=0.0, limit=limit)
    if not np.isfinite(value) or err > tol:
        raise NumericalError(
            f"quadrature did not converge on [{a}, {b}]: error bound {err:.3g} > tol {tol:.3g}"
        )
    return value, err


@lru_cache(maxsize=64)
def _leggauss(n):
    x, w = np.polynomial.legendre.leggauss(n)
    x.flags.writeable = False
    w.flags.writeable = False
    return x, w


def gauss_legendre(n, a=-1.0, b=1.0):
    """Nodes and weights of the n-point Gauss-Legendre rule on [a, b]."""
    x, w = _leggauss(int(n))
    half = 0.5 * (b - a)
    return half * x + 0.5 * (a + b), half * w


def make_rng(seed):
    """The single RNG constructor used by every stochastic routine."""
    if seed is None:
        raise ValueError("an explicit seed is required")
    return np.random.default_rng(np.random.SeedSequence(int(seed)))
