"""Finite-size optics of a dielectric sphere in the grating standing wave.

Conventions follow Bohren & Huffman: time dependence ``exp(-i w t)``,
scattering amplitudes ``S1`` (perpendicular) and ``S2`` (parallel), and the
grating is an x-polarised standing wave ``2 E_1 cos(k z)`` along ``z``.
Positions along the grating axis are measured from an intensity maximum.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import spherical_jn, spherical_yn

from .model import C_LIGHT, EPS0, HBAR, GratingSpec, ParticleSpec
from .special import NumericalError, gauss_legendre

MAX_SIZE_PARAMETER = 100.0
RAYLEIGH_LIMIT_KR = 0.3


class RegimeError(ValueError):
    """The requested approximation is not valid for this particle."""


class RegimeWarning(UserWarning):
    pass


def wiscombe_n_max(x):
    return int(math.ceil(x + 4.0 * x ** (1.0 / 3.0) + 2.0))


def _log_derivative(mx, n_max):
    """D_n(mx) = psi_n'(mx)/psi_n(mx) by downward recurrence, n = 0..n_max."""
    n_start = int(max(n_max, abs(mx))) + 16
    d = np.zeros(n_start + 1, dtype=complex)
    for n in range(n_start, 0, -1):
        d[n - 1] = n / mx - 1.0 / (d[n] + n / mx)
    return d[: n_max + 1]


def mie_coefficients(m, x, n_max):
    """External Mie coefficients ``a_n, b_n`` for ``n = 1..n_max``."""
    m = complex(m)
    n = np.arange(1, n_max + 1)
    psi = x * spherical_jn(np.arange(0, n_max + 1), x)
    chi = -x * spherical_yn(np.arange(0, n_max + 1), x)
    xi = psi - 1j * chi
    dn = _log_derivative(m * x, n_max)[1:]
    ta = dn / m + n / x
    tb = m * dn + n / x
    a = (ta * psi[1:] - psi[:-1]) / (ta * xi[1:] - xi[:-1])
    b = (tb * psi[1:] - psi[:-1]) / (tb * xi[1:] - xi[:-1])
    return a, b


def angular_functions(mu, n_max):
    """pi_n(mu) and tau_n(mu) for n = 1..n_max, shape ``(n_max,) + mu.shape``."""
    mu = np.asarray(mu, dtype=float)
    pi = np.zeros((n_max + 1,) + mu.shape)
    tau = np.zeros_like(pi)
    pi[1] = 1.0
    tau[1] = mu
    for n in range(2, n_max + 1):
        pi[n] = (2 * n - 1) / (n - 1) * mu * pi[n - 1] - n / (n - 1) * pi[n - 2]
        tau[n] = n * mu * pi[n] - (n + 1) * pi[n - 1]
    return pi[1:], tau[1:]


@dataclass(frozen=True)
class MieSolution:
    """Mie series of a homogeneous sphere at one wavelength."""

    size_parameter: float
    relative_index: complex
    a: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)
    radius: float
    wavelength: float

    @property
    def n_max(self):
        return len(self.a)

    @property
    def wavenumber(self):
        return 2.0 * math.pi / self.wavelength

    @property
    def _weights(self):
        n = np.arange(1, self.n_max + 1)
        return (2 * n + 1) / (n * (n + 1)), 2 * n + 1

    def amplitudes(self, theta):
        """Return ``(S1(theta), S2(theta))``."""
        mu = np.cos(np.asarray(theta, dtype=float))
        pi, tau = angular_functions(mu, self.n_max)
        w, _ = self._weights
        shape = (-1,) + (1,) * mu.ndim
        wa = (w * self.a).reshape(shape)
        wb = (w * self.b).reshape(shape)
        s1 = np.sum(wa * pi + wb * tau, axis=0)
        s2 = np.sum(wa * tau + wb * pi, axis=0)
        return s1, s2

    @property
    def q_ext(self):
        _, w = self._weights
        return 2.0 / self.size_parameter**2 * float(np.sum(w * (self.a + self.b).real))

    @property
    def q_sca(self):
        _, w = self._weights
        return 2.0 / self.size_parameter**2 * float(
            np.sum(w * (np.abs(self.a) ** 2 + np.abs(self.b) ** 2))
        )

    @property
    def q_abs(self):
        return max(self.q_ext - self.q_sca, 0.0)

    @property
    def asymmetry(self):
        n = np.arange(1, self.n_max + 1)
        a, b = self.a, self.b
        term1 = n[:-1] * (n[:-1] + 2) / (n[:-1] + 1) * (
            a[:-1] * np.conj(a[1:]) + b[:-1] * np.conj(b[1:])
        ).real
        term2 = (2 * n + 1) / (n * (n + 1)) * (a * np.conj(b)).real
        return 4.0 / (self.size_parameter**2 * self.q_sca) * float(np.sum(term1) + np.sum(term2))

    @property
    def geometric_cross_section(self):
        return math.pi * self.radius**2

    @property
    def c_ext(self):
        return self.q_ext * self.geometric_cross_section

    @property
    def c_sca(self):
        return self.q_sca * self.geometric_cross_section

    @property
    def c_abs(self):
        return self.q_abs * self.geometric_cross_section

    @property
    def c_pr(self):
        return (self.q_ext - self.asymmetry * self.q_sca) * self.geometric_cross_section


def mie_solve(particle: ParticleSpec, wavelength, index=None, n_max=None):
    """Mie coefficients of ``particle`` at ``wavelength`` (vacuum host)."""
    if not (particle.radius > 0 and wavelength > 0):
        raise ValueError("radius and wavelength must be positive")
    m = complex(particle.refractive_index if index is None else index)
    x = 2.0 * math.pi * particle.radius / wavelength
    if x > MAX_SIZE_PARAMETER:
        raise RegimeError(f"size parameter {x:.3g} exceeds the supported {MAX_SIZE_PARAMETER:g}")
    n_max = n_max or wiscombe_n_max(x)
    a, b = mie_coefficients(m, x, n_max)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NumericalError("Mie coefficients are not finite")
    return MieSolution(size_parameter=x, relative_index=m, a=a, b=b,
                       radius=particle.radius, wavelength=wavelength)


# --------------------------------------------------------------------------
# fields and Maxwell stress tensor

def _unit_vectors(theta, phi):
    st, ct, sp, cp = np.sin(theta), np.cos(theta), np.sin(phi), np.cos(phi)
    e_r = np.stack([st * cp, st * sp, ct])
    e_t = np.stack([ct * cp, ct * sp, -st])
    e_p = np.stack([-sp, cp, np.zeros_like(phi)])
    return e_r, e_t, e_p


def scattered_field(sol: MieSolution, rho, theta, phi):
    """Scattered ``E`` and ``eta * H`` for a unit x-polarised wave along +z.

    ``rho = k r`` must lie outside the sphere. Returns Cartesian components
    with shape ``(3,) + theta.shape``.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    n_max = sol.n_max
    n = np.arange(1, n_max + 1)
    h = spherical_jn(n, rho) + 1j * spherical_yn(n, rho)
    dh = spherical_jn(n, rho, derivative=True) + 1j * spherical_yn(n, rho, derivative=True)
    drh = dh + h / rho  # (rho h_n)' / rho
    en = (1j ** n) * (2 * n + 1) / (n * (n + 1))
    pi, tau = angular_functions(np.cos(theta), n_max)
    shape = (-1,) + (1,) * theta.ndim
    st = np.sin(theta)
    nn1 = (n * (n + 1)).reshape(shape)

    ca = (en * 1j * sol.a).reshape(shape)
    cb = (en * sol.b).reshape(shape)
    cbh = (en * 1j * sol.b).reshape(shape)
    cah = (en * sol.a).reshape(shape)
    h_ = h.reshape(shape)
    d_ = drh.reshape(shape)
    cp, sp = np.cos(phi), np.sin(phi)

    # E = sum E_n (i a_n N_e1n - b_n M_o1n)
    e_r = cp * np.sum(ca * nn1 * st * pi * h_ / rho, axis=0)
    e_t = cp * np.sum(ca * tau * d_ - cb * pi * h_, axis=0)
    e_p = sp * np.sum(-ca * pi * d_ + cb * tau * h_, axis=0)
    # eta H = sum E_n (i b_n N_o1n + a_n M_e1n)
    h_r = sp * np.sum(cbh * nn1 * st * pi * h_ / rho, axis=0)
    h_t = sp * np.sum(cbh * tau * d_ - cah * pi * h_, axis=0)
    h_p = cp * np.sum(cbh * pi * d_ - cah * tau * h_, axis=0)

    ur, ut, up = _unit_vectors(theta, phi)
    E = e_r * ur + e_t * ut + e_p * up
    H = h_r * ur + h_t * ut + h_p * up
    return E, H


def _stress_bilinear(U, V, normal):
    """Re[U (V* . n)] - Re(U . V*) n / 2, summed over both orderings by caller."""
    vn = np.sum(np.conj(V) * normal, axis=0)
    uv = np.sum(U * np.conj(V), axis=0)
    return (U * vn).real - 0.5 * uv.real * normal


def standing_wave_force(sol: MieSolution, phase, n_theta=None, n_phi=16, rho=None):
    """Axial force on the sphere at ``k z0 = phase`` in a standing wave.

    The incident field is ``x_hat (e^{i(kz+phase)} + e^{-i(kz+phase)})``, i.e.
    running-wave amplitude 1. The result is in units of ``eps0 / k^2`` and is
    obtained by integrating the time-averaged Maxwell stress tensor of the
    total field over a sphere of radius ``rho / k``.
    """
    x = sol.size_parameter
    rho = x + 1.0 if rho is None else rho
    if rho <= x:
        raise ValueError("integration sphere must enclose the particle")
    if n_theta is None:
        n_theta = int(math.ceil(rho + sol.n_max)) + 24
    mu, wmu = gauss_legendre(n_theta)
    theta = np.arccos(mu)
    phi = (np.arange(n_phi) + 0.5) * (2.0 * math.pi / n_phi)
    T, P = np.meshgrid(theta, phi, indexing="ij")
    W = np.repeat(wmu[:, None], n_phi, axis=1) * (2.0 * math.pi / n_phi)

    normal, _, _ = _unit_vectors(T, P)
    z = rho * np.cos(T)
    ep, em = np.exp(1j * phase), np.exp(-1j * phase)

    Es_p, Hs_p = scattered_field(sol, rho, T, P)
    # counter-propagating wave: rotate by pi about y and flip polarisation
    Es_r, Hs_r = scattered_field(sol, rho, math.pi - T, math.pi - P)
    flip = np.array([-1.0, 1.0, -1.0]).reshape(3, 1, 1)
    Es_m, Hs_m = -flip * Es_r, -flip * Hs_r

    Es = ep * Es_p + em * Es_m
    Hs = ep * Hs_p + em * Hs_m
    zeros = np.zeros_like(z, dtype=complex)
    Ei = np.stack([ep * np.exp(1j * z) + em * np.exp(-1j * z), zeros, zeros])
    Hi = np.stack([zeros, ep * np.exp(1j * z) - em * np.exp(-1j * z), zeros])

    t = (_stress_bilinear(Ei, Es, normal) + _stress_bilinear(Es, Ei, normal)
         + _stress_bilinear(Es, Es, normal)
         + _stress_bilinear(Hi, Hs, normal) + _stress_bilinear(Hs, Hi, normal)
         + _stress_bilinear(Hs, Hs, normal))
    force = 0.5 * np.sum(t * W * rho**2, axis=(1, 2))
    return force


def plane_wave_force(sol: MieSolution, n_theta=None, n_phi=16, rho=None):
    """Force from a single unit-amplitude x-polarised wave along +z (units eps0/k^2)."""
    x = sol.size_parameter
    rho = x + 1.0 if rho is None else rho
    if n_theta is None:
        n_theta = int(math.ceil(rho + sol.n_max)) + 24
    mu, wmu = gauss_legendre(n_theta)
    theta = np.arccos(mu)
    phi = (np.arange(n_phi) + 0.5) * (2.0 * math.pi / n_phi)
    T, P = np.meshgrid(theta, phi, indexing="ij")
    W = np.repeat(wmu[:, None], n_phi, axis=1) * (2.0 * math.pi / n_phi)
    normal, _, _ = _unit_vectors(T, P)
    z = rho * np.cos(T)
    Es, Hs = scattered_field(sol, rho, T, P)
    zeros = np.zeros_like(z, dtype=complex)
    Ei = np.stack([np.exp(1j * z), zeros, zeros])
    Hi = np.stack([zeros, np.exp(1j * z), zeros])
    t = (_stress_bilinear(Ei, Es, normal) + _stress_bilinear(Es, Ei, normal)
         + _stress_bilinear(Es, Es, normal)
         + _stress_bilinear(Hi, Hs, normal) + _stress_bilinear(Hs, Hi, normal)
         + _stress_bilinear(Hs, Hs, normal))
    return 0.5 * np.sum(t * W * rho**2, axis=(1, 2))


def force_efficiency(sol: MieSolution, **quad):
    """Dimensionless standing-wave force amplitude ``F0 k^2 / (eps0 |E0|^2)``.

    Positive when the force points towards the intensity maxima. Tends to
    ``pi x^3 (m^2-1)/(m^2+2)`` for small spheres.
    """
    f_plus = standing_wave_force(sol, math.pi / 4, **quad)[2]
    f_minus = standing_wave_force(sol, -math.pi / 4, **quad)[2]
    q = 0.5 * (f_minus - f_plus)
    if not np.isfinite(q):
        raise NumericalError("standing-wave force did not converge")
    # running-wave amplitude 1 means |E0| = 2
    return q / 4.0


def grating_force_amplitude(mie: MieSolution, grating: GratingSpec, **quad):
    """Amplitude ``F0`` (N) of the force ``F0 sin(2kz)`` exerted by the grating."""
    k = grating.wavenumber
    e0 = grating.field_amplitude
    if e0 == 0:
        return 0.0
    return force_efficiency(mie, **quad) * EPS0 * e0**2 / k**2


def phase_modulation(particle: ParticleSpec, grating: GratingSpec, regime="rayleigh",
                     force=False, mie: MieSolution | None = None):
    """Peak grating phase for the given pulse.

    ``regime='rayleigh'`` uses the point-dipole polarizability and is refused
    for ``kR >= 0.3`` unless ``force`` is set; forcing it beyond ``kR = 1``
    emits a :class:`RegimeWarning`. ``regime='mie'`` uses the stress-tensor
    force amplitude.
    """
    if grating.pulse_energy == 0:
        return 0.0
    return grating.pulse_energy * phase_per_joule(particle, grating, regime, force, mie)


def phase_per_joule(particle: ParticleSpec, grating: GratingSpec, regime="rayleigh",
                    force=False, mie: MieSolution | None = None):
    k = grating.wavenumber
    kr = k * particle.radius
    if regime == "rayleigh":
        if kr >= RAYLEIGH_LIMIT_KR and not force:
            raise RegimeError(f"kR = {kr:.3f} is outside the Rayleigh regime (kR < {RAYLEIGH_LIMIT_KR})")
        if force and kr >= 1.0:
            warnings.warn(f"Rayleigh phase forced at kR = {kr:.3f}", RegimeWarning, stacklevel=3)
        return 2.0 * particle.static_polarizability_real / (HBAR * C_LIGHT * EPS0 * grating.spot_area)
    if regime == "mie":
        mie = mie or mie_solve(particle, grating.wavelength)
        q = force_efficiency(mie)
        # 8 F0 / (hbar c eps0 a_G k |E0|^2) with F0 = q eps0 |E0|^2 / k^2
        return 8.0 * q / (HBAR * C_LIGHT * grating.spot_area * k**3)
    raise ValueError(f"unknown regime {regime!r}")


def pulse_energy_for_phase(phi0, particle, grating, regime="rayleigh", force=False, mie=None):
    """Pulse energy that produces the phase modulation ``phi0``."""
    per_joule = phase_per_joule(particle, grating, regime, force, mie)
    if per_joule <= 0:
        raise RegimeError("grating force vanishes or is repulsive; no pulse energy reaches phi0")
    return phi0 / per_joule


# --------------------------------------------------------------------------
# grating-photon decoherence

def mean_scattered_photons(mie: MieSolution, grating: GratingSpec):
    """Photons scattered from the standing wave, averaged over the particle position."""
    return 2.0 * mie.c_sca * grating.fluence / grating.photon_energy


def mean_absorbed_photons(mie: MieSolution, grating: GratingSpec):
    """Photons absorbed by a particle sitting at an intensity maximum."""
    return 4.0 * mie.c_abs * grating.fluence / grating.photon_energy


def scattering_integrands(mie: MieSolution, n_theta=256, n_phi=256):
    """Angular integrands of the scattering kernel on a product Gauss grid.

    Returns ``(nz, weight, |f|^2, f*(k,n).f(-k,n))`` flattened over the
    grid, with ``weight`` the solid-angle quadrature weight.
    """
    mu, wmu = gauss_legendre(n_theta)
    phi = (np.arange(n_phi) + 0.5) * (2.0 * math.pi / n_phi)
    s1, s2 = mie.amplitudes(np.arccos(mu))
    s1r, s2r = mie.amplitudes(np.arccos(-mu))  # scattering angle pi - theta
    c2 = np.cos(phi) ** 2
    s2p = np.sin(phi) ** 2
    # f(k, n)  = S2(t) cos(p) e_t - S1(t) sin(p) e_p
    # f(-k, n) = -S2(pi-t) cos(p) e_t - S1(pi-t) sin(p) e_p
    ff = np.abs(s2)[:, None] ** 2 * c2 + np.abs(s1)[:, None] ** 2 * s2p
    cross = (-np.conj(s2) * s2r)[:, None] * c2 + (np.conj(s1) * s1r)[:, None] * s2p
    weight = wmu[:, None] * (2.0 * math.pi / n_phi) * np.ones_like(c2)
    nz = np.repeat(mu[:, None], n_phi, axis=1)
    return nz.ravel(), weight.ravel(), ff.ravel(), cross.ravel()


@dataclass(frozen=True)
class GratingDecoherenceKernel:
    """Coefficients of ``R_sca = exp[F(s) + a(s) cos 2kz + i b(s) sin 2kz]``.

    The angular integrals are reduced to weights over ``n_z`` once; ``F``,
    ``a`` and ``b`` then cost one small matrix product per call.
    """

    wavenumber: float
    mean_scattered_photons: float
    nz: np.ndarray = field(repr=False)
    w_ff: np.ndarray = field(repr=False)
    w_cross: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, mie: MieSolution, grating: GratingSpec, mean_photons=None,
              n_theta=256, n_phi=256):
        if mean_photons is None:
            mean_photons = mean_scattered_photons(mie, grating)
        if mean_photons < 0:
            raise ValueError("mean scattered photon number must be >= 0")
        nz, w, ff, cross = scattering_integrands(mie, n_theta, n_phi)
        # reduce over phi: integrands depend on phi only through weights
        n_phi_eff = n_phi
        nz_r = nz.reshape(-1, n_phi_eff)[:, 0]
        w_ff = (w * ff).reshape(-1, n_phi_eff).sum(axis=1)
        w_cross = (w * cross).reshape(-1, n_phi_eff).sum(axis=1)
        total = w_ff.sum()
        # prefactor * integral |f|^2 dOmega is the mean photon number, so F -> -n at large s
        scale = mean_photons / total if total > 0 else 0.0
        return cls(wavenumber=grating.wavenumber, mean_scattered_photons=mean_photons,
                   nz=nz_r, w_ff=scale * w_ff, w_cross=scale * w_cross)

    def _phase(self, s):
        s = np.asarray(s, dtype=float)
        return s[..., None] * self.wavenumber

    def F(self, s):
        ks = self._phase(s)
        return (np.cos((1.0 - self.nz) * ks) - 1.0) @ self.w_ff

    def a(self, s):
        ks = self._phase(s)
        return (np.cos(self.nz * ks) - np.cos(ks)) @ self.w_cross.real

    def b(self, s):
        ks = self._phase(s)
        return np.sin(self.nz * ks) @ self.w_cross.imag

    def coefficients(self, s):
        ks = self._phase(s)
        f = (np.cos((1.0 - self.nz) * ks) - 1.0) @ self.w_ff
        a = (np.cos(self.nz * ks) - np.cos(ks)) @ self.w_cross.real
        b = np.sin(self.nz * ks) @ self.w_cross.imag
        return f, a, b

    def line_coefficients(self, step, n):
        """``(F, a, b)`` at ``s = n * step`` for integer ``n``.

        Uses powers of ``exp(i k n_z step)`` instead of evaluating the
        trigonometric functions afresh for every separation.
        """
        n = np.asarray(n, dtype=int)
        m = int(np.max(np.abs(n))) if n.size else 0
        base = np.exp(1j * self.wavenumber * step * self.nz)
        powers = np.empty((m + 1, len(self.nz)), dtype=complex)
        powers[0] = 1.0
        if m:
            powers[1:] = np.cumprod(np.broadcast_to(base, (m, len(self.nz))), axis=0)
        e = powers[np.abs(n)]
        cos_nz = e.real
        sin_nz = e.imag * np.sign(n)[:, None]
        ks = self.wavenumber * step * n
        ck, sk = np.cos(ks)[:, None], np.sin(ks)[:, None]
        f = (ck * cos_nz + sk * sin_nz - 1.0) @ self.w_ff
        a = (cos_nz - ck) @ self.w_cross.real
        b = sin_nz @ self.w_cross.imag
        return f, a, b

    def reduction(self, s, z):
        f, a, b = self.coefficients(s)
        kz2 = 2.0 * self.wavenumber * np.asarray(z, dtype=float)
        return np.exp(f + a * np.cos(kz2) + 1j * b * np.sin(kz2))


def scattering_reduction(mie: MieSolution, grating: GratingSpec, mean_scattered_photons_, s, z,
                         n_theta=256, n_phi=256):
    """Scattering decoherence factor for path separation ``s`` centred at ``z``."""
    kernel = GratingDecoherenceKernel.build(mie, grating, mean_scattered_photons_, n_theta, n_phi)
    return kernel.reduction(s, z)


def absorption_kernel(k, mean_absorbed, z1, z2):
    """Absorption decoherence between paths at ``z1`` and ``z2``.

    Each absorbed photon is drawn from the standing wave with a local rate
    proportional to ``cos^2(kz)``; the photon number is Poissonian with mean
    ``mean_absorbed`` at an intensity maximum.
    """
    c1, c2 = np.cos(k * np.asarray(z1)), np.cos(k * np.asarray(z2))
    return np.exp(mean_absorbed * (c1 * c2 - 0.5 * c1**2 - 0.5 * c2**2))


def absorption_reduction(mie: MieSolution, grating: GratingSpec, mean_absorbed=None, x=0.0, s=0.0):
    """Absorption factor for the path pair ``x -+ s/2``.

    ``mean_absorbed`` defaults to the value implied by the Mie absorption
    cross-section; it is identically 1 for a non-absorbing sphere.
    """
    if mean_absorbed is None:
        mean_absorbed = mean_absorbed_photons(mie, grating)
    if mean_absorbed < 0:
        raise ValueError("mean absorbed photon number must be >= 0")
    x = np.asarray(x, dtype=float)
    s = np.asarray(s, dtype=float)
    if mean_absorbed == 0:
        return np.ones(np.broadcast(x, s).shape)
    return absorption_kernel(grating.wavenumber, mean_absorbed, x - s / 2, x + s / 2)
