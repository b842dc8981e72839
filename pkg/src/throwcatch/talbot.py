"""Talbot coefficients, decoherence reduction factors and fringe patterns.

The far-field density after the second free flight is a Fourier series in
``x`` with period ``D = d (t1 + t2) / t1``. Each harmonic ``n`` carries a
Talbot coefficient ``B_n`` evaluated at ``u_n = n t1 t2 / (t_T (t1 + t2))``,
a Gaussian envelope from the thermal source width and a product of
environmental reduction factors.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import ive

from . import mie as _mie
from .model import (AMU, C_LIGHT, H_PLANCK, HBAR, K_B, DecoherenceChannel,
                    EnvironmentSpec, ParticleSpec, Setup)
from .output import write_csv, write_json
from .special import (MAX_ARG, MAX_ORDER, NumericalError, bessel_j, fourier_coefficients_batch,
                      fourier_sample_count)

log = logging.getLogger(__name__)

MODES = ("quantum", "classical")
REGIMES = ("rayleigh", "mie")
DEFAULT_N_MAX = 40
TAIL_TOL = 1e-6
LANDAU_B = 0.674885  # sup_x |J_n(x)| <= b n^(-1/3)
MAX_KERNEL_SAMPLES = 2**24  # grid points x columns per Fourier extraction


class OrderTooSmallError(NumericalError):
    """The requested harmonic cut-off leaves too much spectral weight behind."""


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


# --------------------------------------------------------------------------
# Talbot coefficients

@dataclass(frozen=True)
class TalbotCoefficients:
    """``B_n`` for ``n = -N..N`` at arguments ``u`` (one per order)."""

    orders: np.ndarray
    values: np.ndarray
    u: np.ndarray
    mode: str

    def __getitem__(self, n):
        n_max = int(self.orders[-1])
        if abs(int(n)) > n_max:
            raise KeyError(n)
        return self.values[int(n) + n_max]

    @property
    def n_max(self):
        return int(self.orders[-1])

    def norm_sq(self):
        return float(np.sum(np.abs(self.values) ** 2))


def _orders(n_max):
    if n_max < 1:
        raise ValueError("N must be >= 1")
    if n_max > MAX_ORDER:
        raise OrderTooSmallError(f"order cut-off {n_max} exceeds the supported {MAX_ORDER}")
    return np.arange(-n_max, n_max + 1)


def _u_per_order(u, orders):
    u = np.asarray(u, dtype=float)
    if u.ndim == 0:
        return np.full(orders.shape, float(u))
    if u.shape != orders.shape:
        raise ValueError("u must be a scalar or have one entry per order")
    return u


def phase_argument(phi0, u, mode):
    """Argument of the Bessel functions: ``phi0 sin(pi u)`` or its classical limit ``phi0 pi u``."""
    _check_mode(mode)
    u = np.asarray(u, dtype=float)
    if mode == "quantum":
        return phi0 * np.sin(np.pi * u)
    return phi0 * np.pi * u


def talbot_coefficients_closed_form(phi0, u, n_max, mode="quantum"):
    """Decoherence-free coefficients of a pure sinusoidal phase grating."""
    orders = _orders(n_max)
    uu = _u_per_order(u, orders)
    arg = phase_argument(phi0, uu, mode)
    if np.max(np.abs(arg)) > MAX_ARG:
        raise NumericalError(f"phase argument {np.max(np.abs(arg)):.3g} exceeds the supported "
                             f"Bessel range {MAX_ARG:g}; the pattern needs far more than "
                             f"{MAX_ORDER} harmonics")
    values = bessel_j(orders, arg).astype(complex)
    return TalbotCoefficients(orders=orders, values=values, u=uu,
                              mode=f"{mode}_closed_form")


@dataclass(frozen=True)
class GratingKernel:
    """Grating transfer kernel ``K(x, s)`` in the position/separation representation.

    ``K = t(x - s/2) t*(x + s/2) R_sca(s, x) R_abs(x, s)`` with the phase
    grating ``t(x) = exp(i phi0 cos^2(pi x / d))``. In classical mode the
    coherent factor is replaced by its small-separation limit.
    """

    phi0: float
    period: float
    scattering: _mie.GratingDecoherenceKernel | None = None
    mean_absorbed: float = 0.0

    @property
    def decoherence_free(self):
        return (self.scattering is None or self.scattering.mean_scattered_photons == 0) \
            and self.mean_absorbed == 0

    def _parts(self, xi, mode, line=None):
        """Phase amplitude and ``F, a, b`` at ``xi``; ``line=(ubar, n)`` means ``xi = n ubar``."""
        xi = np.asarray(xi, dtype=float)
        amp = phase_argument(self.phi0, xi, mode)
        if self.scattering is not None and self.scattering.mean_scattered_photons > 0:
            if line is None:
                f, a, b = self.scattering.coefficients(xi * self.period)
            else:
                f, a, b = self.scattering.line_coefficients(line[0] * self.period, line[1])
        else:
            f = a = b = np.zeros_like(xi)
        if self.mean_absorbed > 0:
            # exp{-(n/2)(1 - cos ks)(1 - cos 2kx)}: shifts both F and a
            damp = 0.5 * self.mean_absorbed * (1.0 - np.cos(np.pi * xi))
            f, a = f - damp, a + damp
        return amp, f, a, b

    def line_parts(self, ubar, n, mode):
        n = np.asarray(n, dtype=int)
        return self._parts(n * float(ubar), mode, line=(float(ubar), n))

    def sample(self, x, xi, mode, parts=None):
        """Kernel values with shape ``(len(x), len(xi))``."""
        amp, f, a, b = parts or self._parts(xi, mode)
        k2x = (2.0 * np.pi / self.period) * np.asarray(x, dtype=float)[:, None]
        return np.exp(f + a * np.cos(k2x) + 1j * (amp + b) * np.sin(k2x))

    def bandwidth(self, xi, mode, parts=None):
        amp, f, a, b = parts or self._parts(xi, mode)
        spread = float(np.max(np.abs(a) + np.abs(amp + b))) if np.size(amp) else 0.0
        return spread + 10.0 * spread ** (1.0 / 3.0) + 16.0

    def modulus_bound(self, n, xi, mode, parts=None):
        """Upper bound on ``|B_n|`` at ``xi``.

        The kernel is ``exp(F + p cos + q sin)``; expanding in ``e^{+-i 2kx}``
        bounds order ``n`` by ``e^F I_n(|p| + |q|)``, and trivially by
        ``max |K| = e^{F + |a|}``.
        """
        amp, f, a, b = parts or self._parts(xi, mode)
        z = np.abs(a) + np.abs(amp + b)
        n = np.abs(np.asarray(n))
        with np.errstate(divide="ignore"):
            log_i = np.log(ive(n, z)) + z
        return np.exp(f + np.minimum(np.abs(a), log_i))


def _kernel_grid(kernel, n_max, xi, mode, parts=None):
    samples = fourier_sample_count(n_max, kernel.bandwidth(xi, mode, parts))
    if samples * np.size(xi) > MAX_KERNEL_SAMPLES:
        raise NumericalError(
            f"grating kernel needs {samples} samples per period for {np.size(xi)} orders; "
            f"its modulation is too strong to resolve (check photon numbers and phi0)")
    return np.arange(samples) * (kernel.period / samples)


def talbot_coefficients_general(kernel: GratingKernel, u, n_max, mode="quantum"):
    """Generalised coefficients by Fourier extraction of the full grating kernel.

    Order ``n`` is the ``n``-th Fourier coefficient (in ``x`` over one grating
    period) of ``K(x, u_n d)``.
    """
    _check_mode(mode)
    orders = _orders(n_max)
    uu = _u_per_order(u, orders)
    x = _kernel_grid(kernel, n_max, uu, mode)
    samples = len(x)
    full = np.fft.fft(kernel.sample(x, uu, mode), axis=0) / samples
    values = full[orders % samples, np.arange(len(orders))]
    freq = np.fft.fftfreq(samples, 1.0 / samples)
    outside = np.abs(freq)[:, None] > n_max
    tail = float(np.max(np.sum(np.abs(full) * outside, axis=0)))
    if tail > TAIL_TOL:
        raise OrderTooSmallError(
            f"spectral weight {tail:.3g} beyond |n| = {n_max} exceeds {TAIL_TOL:g}; raise N"
        )
    return TalbotCoefficients(orders=orders, values=values, u=uu, mode=f"{mode}_general")


def coefficients_along_line(kernel: GratingKernel, ubar, n_max, mode="quantum"):
    """``B_n(n * ubar)`` for ``|n| <= N``: the coefficients entering the fringe pattern."""
    orders = _orders(n_max)
    u = orders * float(ubar)
    if kernel.decoherence_free:
        return talbot_coefficients_closed_form(kernel.phi0, u, n_max, mode)
    parts = kernel.line_parts(ubar, orders, mode)
    x = _kernel_grid(kernel, n_max, u, mode, parts)
    values = fourier_coefficients_batch(kernel.sample(x, u, mode, parts), orders)
    return TalbotCoefficients(orders=orders, values=values, u=u, mode=f"{mode}_general")


# --------------------------------------------------------------------------
# environmental decoherence

def environmental_reduction(channel: DecoherenceChannel, n, t1, t2, D, m):
    """Reduction of harmonic ``n`` by one channel acting over the whole flight."""
    if not (t1 > 0 and t2 > 0):
        raise ValueError("flight times must be positive")
    n = np.asarray(n)
    sep = np.abs(n) * H_PLANCK * t2 / (m * D)
    f = np.asarray(channel.resolution(sep), dtype=float)
    if np.any(f < -1e-15) or np.any(f > 1 + 1e-15):
        raise ValueError(f"channel {channel.name!r}: resolution function left [0, 1]")
    r = np.exp(-channel.rate * (1.0 - f) * (t1 + t2))
    return float(r) if r.ndim == 0 else r


def combined_reduction(channels, n, t1, t2, D, m):
    r = np.ones(np.shape(n))
    for ch in channels:
        r = r * environmental_reduction(ch, n, t1, t2, D, m)
    return r


def _full_loss(x):
    x = np.asarray(x, dtype=float)
    return np.where(x == 0, 1.0, 0.0)


GAS_MOLECULE_MASS = 28.0 * AMU
INFRARED_PERMITTIVITY = complex(2.1, 0.6)


def gas_collision_channel(particle: ParticleSpec, environment: EnvironmentSpec,
                          molecule_mass=GAS_MOLECULE_MASS):
    """Residual-gas collisions: kinetic rate ``n sigma v``, every collision which-path."""
    T = environment.gas_temperature
    if environment.gas_pressure == 0 or T == 0:
        rate = 0.0
    else:
        density = environment.gas_pressure / (K_B * T)
        v_mean = math.sqrt(8.0 * K_B * T / (math.pi * molecule_mass))
        rate = density * math.pi * particle.radius**2 * v_mean
    return DecoherenceChannel(
        name="gas_collisions", rate=rate, resolution=_full_loss,
        description=f"n*pi*R^2*v_mean, p={environment.gas_pressure:g} Pa, "
                    f"T={T:g} K, m_gas={molecule_mass / AMU:g} amu, f=0",
    )


def thermal_wavelength(temperature):
    return 2.0 * math.pi * HBAR * C_LIGHT / (K_B * temperature)


def _gaussian_resolution(length):
    def f(x):
        x = np.asarray(x, dtype=float)
        return np.exp(-x**2 / (2.0 * length**2))
    return f


def _localization_channel(name, localization_rate, temperature, description):
    # short-distance surrogate: Gamma (1 - f(x)) ~ Lambda x^2 for x << lambda_th
    lam = thermal_wavelength(temperature)
    return DecoherenceChannel(name=name, rate=2.0 * localization_rate * lam**2,
                              resolution=_gaussian_resolution(lam), description=description)


def blackbody_channels(particle: ParticleSpec, environment: EnvironmentSpec,
                       permittivity=INFRARED_PERMITTIVITY):
    """Thermal photon scattering, absorption and emission for a dielectric sphere.

    Localization rates of the long-wavelength limit; ``permittivity`` is the
    infrared value of the material.
    """
    from scipy.special import zeta

    eps = complex(permittivity)
    chi = (eps - 1.0) / (eps + 2.0)
    R = particle.radius
    out = []
    T_env, T_int = environment.environment_temperature, environment.internal_temperature
    if T_env > 0:
        q = K_B * T_env / (HBAR * C_LIGHT)
        lam_sca = (8.0 * math.factorial(8) * zeta(9) * C_LIGHT * R**6 / (9.0 * math.pi)
                   * q**9 * chi.real**2)
        lam_abs = 16.0 * math.pi**5 * C_LIGHT * R**3 / 189.0 * q**6 * chi.imag
        out.append(_localization_channel("blackbody_scattering", lam_sca, T_env,
                                         f"T_env={T_env:g} K, eps_IR={eps}"))
        out.append(_localization_channel("blackbody_absorption", lam_abs, T_env,
                                         f"T_env={T_env:g} K, eps_IR={eps}"))
    if T_int > 0:
        q = K_B * T_int / (HBAR * C_LIGHT)
        lam_emi = 16.0 * math.pi**5 * C_LIGHT * R**3 / 189.0 * q**6 * chi.imag
        out.append(_localization_channel("blackbody_emission", lam_emi, T_int,
                                         f"T_int={T_int:g} K, eps_IR={eps}"))
    return out


CHANNEL_PRESETS = ("gas", "blackbody")


def preset_channels(names, particle, environment, permittivity=INFRARED_PERMITTIVITY):
    channels = []
    for name in names:
        if name == "gas":
            channels.append(gas_collision_channel(particle, environment))
        elif name == "blackbody":
            channels.extend(blackbody_channels(particle, environment, permittivity))
        else:
            raise ValueError(f"unknown decoherence preset {name!r}; known: {CHANNEL_PRESETS}")
    return channels


# --------------------------------------------------------------------------
# grating physics of one particle

@dataclass(frozen=True)
class GratingPhysics:
    """Phase modulation and grating-photon decoherence for one particle."""

    phi0: float
    regime: str
    kernel: GratingKernel
    mean_scattered_photons: float
    mean_absorbed_photons: float
    size_parameter: float
    warnings: tuple = ()


def grating_physics(particle: ParticleSpec, grating, regime="rayleigh",
                    grating_decoherence=True, force_rayleigh=False, phi0=None,
                    n_theta=256, n_phi=256):
    """Build the grating kernel for ``particle``.

    ``phi0`` overrides the value implied by the pulse energy.
    """
    if regime not in REGIMES:
        raise ValueError(f"regime must be one of {REGIMES}, got {regime!r}")
    notes = []
    sol = _mie.mie_solve(particle, grating.wavelength)
    if phi0 is None:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", _mie.RegimeWarning)
            phi0 = _mie.phase_modulation(particle, grating, regime, force=force_rayleigh, mie=sol)
        notes.extend(str(w.message) for w in caught)
    scattering = None
    n_sca = n_abs = 0.0
    if grating_decoherence:
        n_sca = _mie.mean_scattered_photons(sol, grating)
        n_abs = _mie.mean_absorbed_photons(sol, grating)
        scattering = _mie.GratingDecoherenceKernel.build(sol, grating, n_sca, n_theta, n_phi)
    kernel = GratingKernel(phi0=float(phi0), period=grating.period,
                           scattering=scattering, mean_absorbed=n_abs)
    return GratingPhysics(phi0=float(phi0), regime=regime, kernel=kernel,
                          mean_scattered_photons=n_sca, mean_absorbed_photons=n_abs,
                          size_parameter=sol.size_parameter, warnings=tuple(notes))


# --------------------------------------------------------------------------
# fringe spectrum and pattern

@dataclass(frozen=True)
class PatternSpectrum:
    """Fourier coefficients ``c_n`` of ``w(x) = sum c_n exp(2 pi i n x / D)``."""

    orders: np.ndarray
    coefficients: np.ndarray
    period: float
    info: dict = field(default_factory=dict, compare=False)

    @property
    def n_max(self):
        return int(self.orders[-1])

    @property
    def mean_density(self):
        return float(self.coefficients[self.n_max].real)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        phase = 2j * np.pi * np.multiply.outer(x, self.orders) / self.period
        return np.exp(phase) @ self.coefficients

    def padded(self, n_max):
        if n_max < self.n_max:
            raise ValueError("cannot pad to a smaller order")
        pad = n_max - self.n_max
        c = np.concatenate([np.zeros(pad, complex), self.coefficients, np.zeros(pad, complex)])
        return PatternSpectrum(np.arange(-n_max, n_max + 1), c, self.period, dict(self.info))


def flight_parameters(setup: Setup):
    f = setup.flight
    t1, t2 = f.t1, f.t2
    tt = setup.talbot_time
    ubar = t1 * t2 / (tt * (t1 + t2))
    D = setup.fringe_period
    d = setup.grating.period
    envelope_rate = 2.0 * math.pi**2 * setup.sigma_x**2 * t2**2 / (d**2 * (t1 + t2) ** 2)
    prefactor = setup.particle.mass / (math.sqrt(2.0 * math.pi) * setup.sigma_p * (t1 + t2))
    return ubar, D, envelope_rate, prefactor


def _tail_bound(physics, mode, ubar, envelope_rate, channels, setup, n_from, chunk=64):
    """Bound on ``sum_{|n| > n_from} |B_n| env_n R_n``, i.e. relative to ``c_0``.

    Orders are bounded one by one up to the point where the Gaussian envelope
    alone (with ``|B_n| R_n <= 1``) leaves less than ``1e-3`` of the
    tolerance; that remainder is added in closed form.
    """
    f = setup.flight
    kernel = physics.kernel

    def block(n):
        env = np.exp(-envelope_rate * n.astype(float) ** 2)
        bound = kernel.modulus_bound(n, None, mode, kernel.line_parts(ubar, n, mode))
        if kernel.decoherence_free:
            bound = np.minimum(bound, LANDAU_B * n ** (-1.0 / 3.0))
        red = combined_reduction(channels, n, f.t1, f.t2, setup.fringe_period, setup.particle.mass)
        return 2.0 * float(np.sum(env * bound * red))

    limit = 20 * MAX_ORDER
    if envelope_rate > 0:
        target = 1e-3 * TAIL_TOL / 4.0
        n_stop = max(n_from + chunk, int(math.ceil(math.sqrt(-math.log(target) / envelope_rate))) + 1)
        if n_stop > limit:
            return math.inf
        rest = 2.0 * math.exp(-envelope_rate * n_stop**2) / (1.0 - math.exp(-2.0 * envelope_rate * n_stop))
        return block(np.arange(n_from + 1, n_stop + 1)) + rest
    # no thermal envelope: rely on the decay of the coefficient bound itself
    total, start = 0.0, n_from + 1
    while start <= limit:
        part = block(np.arange(start, start + chunk))
        total += part
        if part < 1e-3 * TAIL_TOL:
            return total
        start += chunk
    return math.inf


def pattern_spectrum(setup: Setup, physics: GratingPhysics, mode="quantum", channels=(),
                     n_max=DEFAULT_N_MAX, tail_tol=TAIL_TOL):
    """Harmonic content of the fringe pattern, escalating ``N`` until the tail is below ``tail_tol``.

    The tail is bounded rigorously using ``|B_n| <= max|K|`` (or Landau's
    bound on ``J_n``), the Gaussian envelope and the reduction factors.
    """
    _check_mode(mode)
    ubar, D, envelope_rate, prefactor = flight_parameters(setup)
    f = setup.flight
    n = n_max
    while True:
        tail = _tail_bound(physics, mode, ubar, envelope_rate, channels, setup, n)
        if tail <= tail_tol or n >= MAX_ORDER:
            break
        n = min(2 * n, MAX_ORDER)
    if tail > tail_tol:
        raise OrderTooSmallError(f"tail weight {tail:.3g} still above {tail_tol:g} at N = {n}")
    B = coefficients_along_line(physics.kernel, ubar, n, mode)
    orders = B.orders
    env = np.exp(-envelope_rate * orders.astype(float) ** 2)
    red = combined_reduction(channels, orders, f.t1, f.t2, D, setup.particle.mass)
    c = prefactor * B.values * env * red
    info = {"n_max": n, "tail_bound": tail, "ubar": ubar, "mode": mode,
            "coefficient_mode": B.mode}
    return PatternSpectrum(orders=orders, coefficients=c, period=D, info=info)


def default_grid(period, periods=4, points_per_period=200):
    half = periods / 2.0 * period
    n = int(periods * points_per_period) + 1
    return np.linspace(-half, half, n)


def evaluate_density(spectrum: PatternSpectrum, x, notes=None):
    """Real density on ``x``; checks the imaginary residue and clamps round-off negatives."""
    w = spectrum.evaluate(x)
    scale = max(abs(spectrum.mean_density), float(np.max(np.abs(w))), 1e-300)
    resid = float(np.max(np.abs(w.imag))) / scale
    if resid > 1e-9:
        raise NumericalError(f"imaginary residue {resid:.3g} of the fringe density exceeds 1e-9")
    if resid > 0:
        log.debug("discarded imaginary residue %.3g", resid)
    w = w.real.copy()
    neg = w < 0
    if np.any(neg):
        worst = float(-w.min()) / scale
        if worst > 1e-9:
            raise NumericalError(f"fringe density negative by {worst:.3g} of its scale")
        msg = f"clamped {int(neg.sum())} negative density samples (min {-worst:.3g} relative)"
        log.warning(msg)
        if notes is not None:
            notes.append(msg)
        w[neg] = 0.0
    return w


@dataclass(frozen=True)
class FringePattern:
    """Sampled density ``w(x)`` with its spectrum and a parameter echo."""

    x: np.ndarray
    w: np.ndarray
    period: float
    spectrum: PatternSpectrum
    mode: str
    metadata: dict = field(default_factory=dict, compare=False)

    def to_csv(self, path):
        return write_csv(path, [self.x, self.w], ["x [m]", "w [1/m]"])

    def write(self, stem):
        """Write ``<stem>.csv`` and the ``<stem>.json`` metadata sidecar."""
        csv = self.to_csv(f"{stem}.csv")
        meta = dict(self.metadata)
        meta.update(mode=self.mode, period_m=self.period,
                    visibility=visibility(self).as_dict(),
                    visibility_harmonic=visibility(self, "harmonic_fit").as_dict())
        js = write_json(f"{stem}.json", meta)
        return [csv, js]


def setup_echo(setup: Setup):
    p, g, t, e, f = setup.particle, setup.grating, setup.trap, setup.environment, setup.flight
    return {
        "particle": {"mass_kg": p.mass, "density": p.density, "radius_m": p.radius,
                     "refractive_index": p.refractive_index},
        "grating": {"wavelength_m": g.wavelength, "pulse_energy_J": g.pulse_energy,
                    "spot_area_m2": g.spot_area, "pulse_duration_s": g.pulse_duration},
        "trap": {"wavelength_m": t.wavelength, "power_W": t.power, "waist_m": t.waist,
                 "numerical_aperture": t.numerical_aperture, "frequency_Hz": t.frequency},
        "environment": {"gas_pressure_Pa": e.gas_pressure, "gas_temperature_K": e.gas_temperature,
                        "internal_temperature_K": e.internal_temperature,
                        "environment_temperature_K": e.environment_temperature},
        "flight": {"t1_s": f.t1, "t2_s": f.t2, "temperature_K": f.temperature},
        "derived": {"talbot_time_s": setup.talbot_time, "sigma_x_m": setup.sigma_x,
                    "sigma_p": setup.sigma_p, "fringe_period_m": setup.fringe_period},
    }


def channel_ledger(channels):
    return [{"name": c.name, "rate_per_s": c.rate, "description": c.description} for c in channels]


def fringe_pattern(setup: Setup, physics: GratingPhysics, mode="quantum", channels=(),
                   grid=None, n_max=DEFAULT_N_MAX):
    """Fringe pattern for one configuration on ``grid`` (default: 4 periods centred on 0)."""
    spec = pattern_spectrum(setup, physics, mode, channels, n_max)
    x = default_grid(spec.period) if grid is None else np.asarray(grid, dtype=float)
    notes = list(physics.warnings)
    w = evaluate_density(spec, x, notes)
    meta = {
        "setup": setup_echo(setup),
        "phi0": physics.phi0, "regime": physics.regime, "size_parameter_kR": physics.size_parameter,
        "grating_photons": {"mean_scattered": physics.mean_scattered_photons,
                            "mean_absorbed": physics.mean_absorbed_photons},
        "decoherence_channels": channel_ledger(channels),
        "spectrum": spec.info,
        "warnings": notes,
    }
    return FringePattern(x=x, w=w, period=spec.period, spectrum=spec, mode=mode, metadata=meta)


# --------------------------------------------------------------------------
# visibility

VISIBILITY_METHODS = ("max_min_central_period", "harmonic_fit")


@dataclass(frozen=True)
class VisibilityResult:
    visibility: float
    method: str
    window: tuple
    flags: tuple = ()

    def as_dict(self):
        return {"visibility": self.visibility, "method": self.method,
                "window_m": list(self.window), "flags": list(self.flags)}


def spectrum_visibility(spectrum: PatternSpectrum, method="max_min_central_period"):
    """Visibility of the periodic density described by ``spectrum``."""
    D = spectrum.period
    window = (-D / 2.0, D / 2.0)
    c0 = spectrum.mean_density
    if method == "harmonic_fit":
        c1 = abs(spectrum.coefficients[spectrum.n_max + 1]) if spectrum.n_max >= 1 else 0.0
        if c0 <= 0 or c1 <= 1e-14 * abs(c0):
            return VisibilityResult(0.0, method, window, ("flat",))
        v = 2.0 * c1 / c0
        flags = ()
        if v > 1.0:
            v, flags = 1.0, ("clipped",)
        return VisibilityResult(float(v), method, window, flags)
    if method != "max_min_central_period":
        raise ValueError(f"unknown visibility method {method!r}")

    # one period of a periodic function: sample [-D/2, D/2) by inverse FFT
    m = 1 << max(12, int(np.ceil(np.log2(64 * spectrum.n_max))))
    buf = np.zeros(m, dtype=complex)
    buf[spectrum.orders % m] = spectrum.coefficients * np.exp(-1j * np.pi * spectrum.orders)
    w = (np.fft.ifft(buf) * m).real
    x = window[0] + np.arange(m) * (D / m)
    step = D / m

    def refine(i, sign):
        # sign = +1 polishes a maximum, -1 a minimum
        lo, hi = x[i] - step, x[i] + step
        res = minimize_scalar(lambda t: -sign * float(spectrum.evaluate(np.array([t]))[0].real),
                              bounds=(lo, hi), method="bounded", options={"xatol": step * 1e-6})
        best = -sign * float(res.fun)
        return max(best, w[i]) if sign > 0 else min(best, w[i])

    w_max = refine(int(np.argmax(w)), 1.0)
    w_min = refine(int(np.argmin(w)), -1.0)
    w_min = max(w_min, 0.0)
    if w_max + w_min <= 0 or (w_max - w_min) <= 1e-12 * abs(w_max):
        return VisibilityResult(0.0, method, window, ("flat",))
    return VisibilityResult(float((w_max - w_min) / (w_max + w_min)), method, window)


def visibility(pattern: FringePattern, method="max_min_central_period"):
    span = float(pattern.x[-1] - pattern.x[0])
    if span < 3.0 * pattern.period * (1 - 1e-9):
        raise ValueError("pattern must span at least three fringe periods")
    return spectrum_visibility(pattern.spectrum, method)


# --------------------------------------------------------------------------
# a complete single-particle experiment

@dataclass(frozen=True)
class Experiment:
    """A setup plus the modelling choices needed to predict its fringes.

    ``classical_decoherence`` controls whether the classical shadow pattern
    is damped by the same channels as the quantum one; by default the
    classical prediction is the bare Moire pattern.
    """

    setup: Setup
    regime: str = "rayleigh"
    grating_decoherence: bool = True
    channel_presets: tuple = ("gas",)
    extra_channels: tuple = ()
    classical_decoherence: bool = False
    force_rayleigh: bool = False
    infrared_permittivity: complex = INFRARED_PERMITTIVITY
    n_max: int = DEFAULT_N_MAX
    angular_grid: tuple = (256, 256)
    phi0: float | None = None

    def replace(self, **kw):
        from dataclasses import replace
        return replace(self, **kw)

    def with_setup(self, **kw):
        return self.replace(setup=self.setup.replace(**kw))

    def resolved(self):
        """Replace a target ``phi0`` by the pulse energy that produces it.

        ``phi0 = 0`` means no grating at all and is kept as an override.
        """
        if self.phi0 is None:
            return self
        if self.phi0 == 0:
            return self.replace(grating_decoherence=False)
        s = self.setup
        energy = _mie.pulse_energy_for_phase(self.phi0, s.particle, s.grating, self.regime,
                                             force=self.force_rayleigh)
        return self.with_setup(grating=s.grating.with_pulse_energy(energy)).replace(phi0=None)

    def _pending(self):
        return self.phi0 is not None and self.phi0 != 0

    def physics(self, decoherence=True):
        if self._pending():
            return self.resolved().physics(decoherence)
        n_theta, n_phi = self.angular_grid
        # phi0 = 0 means the grating pulse is off, so it scatters nothing either
        on = self.grating_decoherence and decoherence and self.phi0 != 0
        return grating_physics(self.setup.particle, self.setup.grating, self.regime, on,
                               self.force_rayleigh, self.phi0, n_theta, n_phi)

    def channels(self):
        chans = preset_channels(self.channel_presets, self.setup.particle,
                                self.setup.environment, self.infrared_permittivity)
        return list(chans) + list(self.extra_channels)

    def decohered(self, mode):
        _check_mode(mode)
        return mode == "quantum" or self.classical_decoherence

    def inputs(self, mode, physics=None):
        """Grating physics and channels that apply to ``mode``."""
        if self._pending():
            return self.resolved().inputs(mode, physics)
        on = self.decohered(mode)
        if physics is None or (not on and not physics.kernel.decoherence_free):
            physics = self.physics(decoherence=on)
        return physics, (self.channels() if on else [])

    def spectrum(self, mode="quantum", physics=None):
        if self._pending():
            return self.resolved().spectrum(mode, physics)
        physics, channels = self.inputs(mode, physics)
        return pattern_spectrum(self.setup, physics, mode, channels, self.n_max)

    def pattern(self, mode="quantum", grid=None):
        if self._pending():
            return self.resolved().pattern(mode, grid)
        physics, channels = self.inputs(mode)
        pat = fringe_pattern(self.setup, physics, mode, channels, grid, self.n_max)
        pat.metadata["classical_decoherence"] = self.classical_decoherence
        return pat

    def visibility(self, mode="quantum", method="max_min_central_period"):
        return spectrum_visibility(self.spectrum(mode), method)
