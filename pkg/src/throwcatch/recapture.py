"""Recapture feasibility: transverse cooling limit, axial braking forces and
re-entry position estimation from synthetic position traces."""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import partial

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import brentq, least_squares
from scipy.signal import butter, sosfiltfilt

from .mie import RegimeError, RegimeWarning
from .model import C_LIGHT, EPS0, G_ACCEL, HBAR, K_B, ParticleSpec, TrapSpec
from .special import make_rng

AXIAL_RAYLEIGH_LIMIT_KR = 0.5


def potential_barrier(x, trap: TrapSpec, particle: ParticleSpec):
    """Depth of the optical potential at transverse offset ``x`` (J)."""
    alpha = particle.polarizability_trap.real
    x = np.asarray(x, dtype=float)
    u = alpha * trap.power / (C_LIGHT * EPS0 * math.pi * trap.waist**2) * np.exp(-2.0 * (x / trap.waist) ** 2)
    return float(u) if u.ndim == 0 else u


def flight_time(height):
    """Up-and-down flight time for a throw of apex ``height``."""
    if not height >= 0:
        raise ValueError("height must be >= 0")
    return 2.0 * math.sqrt(2.0 * height / G_ACCEL)


@dataclass(frozen=True)
class TransverseConstraint:
    height: float
    total_time: float
    x_max: float
    v_x_max: float
    T_max: float
    residual: float
    feasible: bool = True
    message: str = ""

    def as_dict(self):
        return asdict(self)


def transverse_constraint(height, trap: TrapSpec, particle: ParticleSpec):
    """Largest sideways speed for which the particle still returns inside the barrier.

    Solves ``m v^2 / 2 = U(v * t_total)``; kinetic energy rises and the
    barrier at the landing offset falls with ``v``, so the crossing is unique.
    """
    if not height > 0:
        raise ValueError("throw height must be positive")
    m = particle.mass
    t_total = flight_time(height)

    def gap(v):
        return 0.5 * m * v * v - potential_barrier(v * t_total, trap, particle)

    u0 = potential_barrier(0.0, trap, particle)
    if u0 <= 0:
        return TransverseConstraint(height, t_total, 0.0, 0.0, 0.0, float("nan"), False,
                                    "no confining barrier (non-positive polarizability)")
    v_hi = math.sqrt(2.0 * u0 / m) * 1.01
    if not (gap(0.0) < 0 < gap(v_hi)):
        return TransverseConstraint(height, t_total, 0.0, 0.0, 0.0, float("nan"), False,
                                    "no crossing of kinetic energy and barrier in the bracket")
    v = brentq(gap, 0.0, v_hi, xtol=1e-30, rtol=4 * np.finfo(float).eps, maxiter=500)
    return TransverseConstraint(height=height, total_time=t_total, x_max=v * t_total, v_x_max=v,
                                T_max=m * v * v / K_B, residual=abs(gap(v)))


# --------------------------------------------------------------------------
# axial forces

@dataclass(frozen=True)
class AxialForceProfile:
    """Forces on the beam axis; the particle travels along +z into the focus
    while the trapping light propagates along -z.

    ``f_grad`` is signed along +z; ``f_scat`` is the (positive) magnitude of
    the radiation-pressure force, which points along -z. ``f_net = f_grad - f_scat``.
    """

    z: np.ndarray = field(repr=False)
    f_grad: np.ndarray = field(repr=False)
    f_scat: np.ndarray = field(repr=False)
    power: float
    boundary_I_II: float
    peak_position: float
    region_III_end: float
    f_avg: float
    peak_force: float
    threshold: float
    warnings: tuple = ()

    @property
    def f_net(self):
        return self.f_grad - self.f_scat

    @property
    def region_III_length(self):
        return self.region_III_end

    def summary(self):
        return {"power_W": self.power, "boundary_I_II_m": self.boundary_I_II,
                "peak_position_m": self.peak_position, "region_III_end_m": self.region_III_end,
                "f_avg_N": self.f_avg, "peak_force_N": self.peak_force,
                "threshold": self.threshold, "warnings": list(self.warnings)}


def _crossing(z, y, i):
    # linear interpolation of the zero between z[i] and z[i+1]
    return z[i] - y[i] * (z[i + 1] - z[i]) / (y[i + 1] - y[i])


def axial_forces(trap: TrapSpec, particle: ParticleSpec, window=(-3e-6, 3e-6), points=6001,
                 threshold=0.5, force_rayleigh=False):
    """Gradient and scattering forces along the axis of a paraxial Gaussian focus.

    Region I/II boundary: where gradient and scattering forces balance
    before the focus. Region III: from the focus to where the decelerating
    net force has dropped to ``threshold`` of its peak; ``f_avg`` is its mean
    over that stretch.
    """
    kr = trap.wavenumber * particle.radius
    notes = []
    if kr >= AXIAL_RAYLEIGH_LIMIT_KR:
        if not force_rayleigh:
            raise RegimeError(f"kR = {kr:.3f} at the trap wavelength is outside the Rayleigh model "
                              f"(< {AXIAL_RAYLEIGH_LIMIT_KR}); a Mie force model would be required")
        msg = f"point-dipole trap forces forced at kR = {kr:.3f}"
        warnings.warn(msg, RegimeWarning, stacklevel=2)
        notes.append(msg)
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    z0, z1 = window
    if not (z0 < 0 < z1):
        raise ValueError("window must contain the focal plane")

    z = np.linspace(z0, z1, int(points))
    zr = trap.rayleigh_range
    i0 = trap.peak_intensity
    intensity = i0 / (1.0 + (z / zr) ** 2)
    didz = -2.0 * i0 * z / zr**2 / (1.0 + (z / zr) ** 2) ** 2
    alpha = particle.polarizability_trap
    k = trap.wavenumber
    sigma = k**4 * abs(alpha) ** 2 / (6.0 * math.pi * EPS0**2)
    sigma += particle.absorption_cross_section_trap
    f_grad = alpha.real / (2.0 * C_LIGHT * EPS0) * didz
    f_scat = sigma * intensity / C_LIGHT
    net = f_grad - f_scat

    before = np.where(z < 0)[0]
    sign = np.sign(net[before])
    flips = np.where(sign[:-1] != sign[1:])[0]
    boundary = _crossing(z, net, before[flips[-1]]) if len(flips) else float("nan")

    after = z >= 0
    za, na = z[after], net[after]
    ipk = int(np.argmin(na))
    peak = float(na[ipk])
    level = threshold * peak
    tail = np.where(na[ipk:] > level)[0]
    if len(tail):
        j = ipk + int(tail[0])
        end = za[j - 1] + (level - na[j - 1]) * (za[j] - za[j - 1]) / (na[j] - na[j - 1])
    else:
        end = float(za[-1])
        notes.append("region III extends beyond the modelled window")
    inside = za <= end
    zz = np.append(za[inside], end)
    ff = np.append(na[inside], np.interp(end, za, na))
    f_avg = float(trapezoid(ff, zz) / end)

    return AxialForceProfile(z=z, f_grad=f_grad, f_scat=f_scat, power=trap.power,
                             boundary_I_II=float(boundary), peak_position=float(za[ipk]),
                             region_III_end=float(end), f_avg=f_avg, peak_force=peak,
                             threshold=threshold, warnings=tuple(notes))


def max_stoppable_velocity(f_avg, distance, mass):
    """Speed whose kinetic energy the average braking force removes over ``distance``."""
    if mass <= 0:
        raise ValueError("mass must be positive")
    if distance < 0:
        raise ValueError("distance must be >= 0")
    return math.sqrt(2.0 * abs(f_avg) * distance / mass)


def profile_max_velocity(profile: AxialForceProfile, mass):
    return max_stoppable_velocity(profile.f_avg, profile.region_III_length, mass)


def required_power(return_speed, baseline_power, baseline_v_max):
    """Trap power that stops ``return_speed``; both forces scale linearly with power."""
    if not return_speed > 0:
        raise ValueError("return speed must be positive")
    if not (baseline_power > 0 and baseline_v_max > 0):
        raise ValueError("baseline power and speed must be positive")
    return baseline_power * (return_speed / baseline_v_max) ** 2


def required_power_for_profile(return_speed, profile: AxialForceProfile, mass):
    return required_power(return_speed, profile.power, profile_max_velocity(profile, mass))


def ground_state_temperature(frequency):
    """Temperature equivalent of one trap quantum, ``hbar * 2 pi nu / k_B``."""
    if not frequency > 0:
        raise ValueError("frequency must be positive")
    return HBAR * 2.0 * math.pi * frequency / K_B


def rms_displacement(temperature, mass, omega):
    """Thermal position spread in a harmonic trap of angular frequency ``omega``."""
    if temperature < 0 or mass <= 0 or omega <= 0:
        raise ValueError("need T >= 0, m > 0, omega > 0")
    return math.sqrt(K_B * temperature / (mass * omega**2))


# --------------------------------------------------------------------------
# re-entry estimation

DEFAULT_NOISE_ASD = 1e-9  # m / sqrt(Hz)
DEFAULT_SAMPLE_RATE = 250e3
DEFAULT_WINDOW = 0.1
FREQUENCY_TOLERANCE = 0.01  # relative; the trap frequency is known in advance


@dataclass(frozen=True)
class OscillatorParams:
    frequency: float = 50e3
    damping_rate: float = 10.0
    entry_velocity: float = 1e-3


@dataclass(frozen=True)
class ReentryTrace:
    t: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)
    trap_on_time: float
    true_entry: float
    sample_rate: float


@dataclass(frozen=True)
class ReentryFit:
    estimate: float
    success: bool
    amplitude: tuple
    frequency: float
    damping_rate: float
    residual_rms: float
    noise_rms: float
    message: str = ""


def _oscillation(tau, a, b, omega, gamma):
    return np.exp(-0.5 * gamma * tau) * (a * np.cos(omega * tau) + b * np.sin(omega * tau))


def synthesize_reentry_trace(true_entry, params=OscillatorParams(), noise_asd=DEFAULT_NOISE_ASD,
                             duration=DEFAULT_WINDOW, sample_rate=DEFAULT_SAMPLE_RATE, seed=0):
    """Damped oscillation starting at ``true_entry`` at trap-on, plus white measurement noise.

    ``noise_asd`` is a one-sided amplitude spectral density; the per-sample
    standard deviation is ``noise_asd * sqrt(sample_rate / 2)``.
    """
    if duration * params.frequency < 5:
        raise ValueError("the trace must cover at least five oscillation periods")
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    omega0 = 2.0 * math.pi * params.frequency
    gamma = params.damping_rate
    omega = math.sqrt(omega0**2 - 0.25 * gamma**2)
    b = (params.entry_velocity + 0.5 * gamma * true_entry) / omega
    z = _oscillation(t, true_entry, b, omega, gamma)
    if noise_asd > 0:
        rng = make_rng(seed)
        z = z + rng.normal(0.0, noise_asd * math.sqrt(sample_rate / 2.0), size=n)
    return ReentryTrace(t=t, z=z, trap_on_time=0.0, true_entry=float(true_entry),
                        sample_rate=float(sample_rate))


def fit_reentry(trace: ReentryTrace, frequency=50e3, window=None, band=(0.7, 1.3), order=4,
                guard_periods=20):
    """Band-pass, fit a damped sinusoid and extrapolate it back to trap-on.

    The first and last ``guard_periods`` oscillations of the filtered trace
    are excluded from the fit to avoid filter edge transients.
    """
    fs = trace.sample_rate
    tau = trace.t - trace.trap_on_time
    keep = tau >= 0
    if window is not None:
        keep &= tau <= window
    tau, z = tau[keep], trace.z[keep]
    if tau[-1] * frequency < 5:
        raise ValueError("fit window must cover at least five oscillation periods")
    sos = butter(order, [band[0] * frequency, band[1] * frequency], btype="bandpass", fs=fs,
                 output="sos")
    zf = sosfiltfilt(sos, z)
    guard = guard_periods / frequency
    sel = (tau >= guard) & (tau <= tau[-1] - guard)
    if sel.sum() < 20:
        sel = np.ones_like(tau, dtype=bool)
    ts, ys = tau[sel], zf[sel]

    # start: spectral peak, then linear amplitudes at that frequency
    spec = np.abs(np.fft.rfft(ys * np.hanning(len(ys))))
    freqs = np.fft.rfftfreq(len(ys), 1.0 / fs)
    inband = (freqs > band[0] * frequency) & (freqs < band[1] * frequency)
    w0 = 2.0 * math.pi * freqs[inband][np.argmax(spec[inband])]
    basis = np.column_stack([np.cos(w0 * ts), np.sin(w0 * ts)])
    (a0, b0), *_ = np.linalg.lstsq(basis, ys, rcond=None)

    scale = max(float(np.std(ys)), 1e-30)

    def resid(p):
        return (_oscillation(ts, p[0], p[1], p[2], p[3]) - ys) / scale

    res = least_squares(resid, x0=[a0, b0, w0, 0.0], x_scale=[scale, scale, w0 * 1e-4, 1.0],
                        method="lm", xtol=1e-14, ftol=1e-14, max_nfev=2000)
    a, b, omega, gamma = res.x
    rms = float(np.sqrt(np.mean((res.fun * scale) ** 2)))
    f_fit = omega / (2 * math.pi)
    problems = []
    if not (res.success and np.all(np.isfinite(res.x))):
        problems.append(f"no convergence ({res.message})")
    elif abs(f_fit / frequency - 1.0) > FREQUENCY_TOLERANCE:
        problems.append(f"fitted frequency {f_fit:.6g} Hz is not the trap frequency")
    elif not np.any(ys):
        problems.append("no signal in the pass band")
    ok = not problems
    return ReentryFit(estimate=float(a), success=ok, amplitude=(float(a), float(b)),
                      frequency=float(f_fit), damping_rate=float(gamma),
                      residual_rms=rms, noise_rms=float(np.std(z - np.mean(z))),
                      message="; ".join(problems))


def synthesize_and_fit_reentry(true_entry, params=OscillatorParams(), noise_asd=DEFAULT_NOISE_ASD,
                               window=DEFAULT_WINDOW, seed=0, sample_rate=DEFAULT_SAMPLE_RATE,
                               band=(0.7, 1.3)):
    """One synthetic trial: returns the :class:`ReentryFit` for a fresh noisy trace."""
    trace = synthesize_reentry_trace(true_entry, params, noise_asd, window, sample_rate, seed)
    return fit_reentry(trace, params.frequency, window, band)


def reentry_trials(true_entry, seeds, params=OscillatorParams(), noise_asd=DEFAULT_NOISE_ASD,
                   window=DEFAULT_WINDOW, sample_rate=DEFAULT_SAMPLE_RATE, workers=1):
    """Independent synthetic trials, one per seed; returns the list of fits in seed order."""
    run = partial(_trial, true_entry, params, noise_asd, window, sample_rate)
    seeds = [int(s) for s in seeds]
    if workers <= 1 or len(seeds) < 2 * workers:
        return [run(s) for s in seeds]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, seeds, chunksize=max(1, len(seeds) // (4 * workers))))


def _trial(true_entry, params, noise_asd, window, sample_rate, seed):
    return synthesize_and_fit_reentry(true_entry, params, noise_asd, window, seed, sample_rate)


# --------------------------------------------------------------------------
# report

@dataclass(frozen=True)
class RecaptureReport:
    transverse: TransverseConstraint
    axial: AxialForceProfile
    v_max: float
    return_speed: float
    required_power: float
    ground_state_temperature: float
    rms_displacement_ground: float
    warnings: tuple = ()

    def as_dict(self):
        return {"transverse": self.transverse.as_dict(), "axial": self.axial.summary(),
                "v_max_m_per_s": self.v_max, "return_speed_m_per_s": self.return_speed,
                "required_power_W": self.required_power,
                "ground_state_temperature_K": self.ground_state_temperature,
                "rms_displacement_ground_m": self.rms_displacement_ground,
                "warnings": list(self.warnings)}


def recapture_report(height, trap: TrapSpec, particle: ParticleSpec, axial_particle=None,
                     return_speed=None, window=(-3e-6, 3e-6), points=6001, threshold=0.5,
                     force_rayleigh=False):
    """Transverse and axial feasibility for one throw.

    ``axial_particle`` lets the braking analysis use a different particle
    from the transverse one; ``return_speed`` defaults to the free-fall
    speed from ``height``.
    """
    axial_particle = particle if axial_particle is None else axial_particle
    tc = transverse_constraint(height, trap, particle)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RegimeWarning)
        prof = axial_forces(trap, axial_particle, window, points, threshold, force_rayleigh)
    v_max = profile_max_velocity(prof, axial_particle.mass)
    speed = math.sqrt(2.0 * G_ACCEL * height) if return_speed is None else float(return_speed)
    power = required_power(speed, prof.power, v_max) if v_max > 0 else float("inf")
    t_gs = ground_state_temperature(trap.frequency)
    x_gs = rms_displacement(t_gs, particle.mass, 2.0 * math.pi * trap.frequency)
    notes = list(prof.warnings)
    notes += [str(w.message) for w in caught if str(w.message) not in notes]
    if not tc.feasible:
        notes.append(tc.message)
    return RecaptureReport(transverse=tc, axial=prof, v_max=v_max, return_speed=speed,
                           required_power=power, ground_state_temperature=t_gs,
                           rms_displacement_ground=x_gs, warnings=tuple(notes))
