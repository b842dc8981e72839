"""Physical parameters shared by every part of the simulator.

Everything is SI. Conversions from the laboratory units used in config
files (amu, mbar, nm, mK, ms) happen in :mod:`throwcatch.config` and
nowhere else.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy import constants as const

G_ACCEL = 9.81
H_PLANCK = const.h
HBAR = const.hbar
K_B = const.k
C_LIGHT = const.c
EPS0 = const.epsilon_0
AMU = const.atomic_mass

DEFAULT_DENSITY = 1850.0
DEFAULT_INDEX_GRATING = complex(1.54, 0.0)
DEFAULT_INDEX_TRAP = complex(1.444, 0.0)


class ModelError(ValueError):
    """A physical parameter violates its domain."""


def derive_radius(mass, density):
    """Radius of a homogeneous sphere of given mass and density."""
    if not (mass > 0 and density > 0):
        raise ModelError(f"mass and density must be positive, got {mass!r}, {density!r}")
    return (3.0 * mass / (4.0 * math.pi * density)) ** (1.0 / 3.0)


def sphere_mass(radius, density):
    return density * 4.0 / 3.0 * math.pi * radius**3


def clausius_mossotti(radius, index):
    """Complex polarizability (SI, C m^2 / V) of a small dielectric sphere."""
    eps = complex(index) ** 2
    return 4.0 * math.pi * EPS0 * radius**3 * (eps - 1.0) / (eps + 2.0)


@dataclass(frozen=True)
class ParticleSpec:
    """Nanosphere mass, geometry and optical constants.

    ``radius`` is derived from ``mass`` and ``density`` unless given.
    ``refractive_index`` is taken at the grating wavelength and
    ``refractive_index_trap`` at the trap wavelength.
    """

    mass: float
    density: float = DEFAULT_DENSITY
    radius: Optional[float] = None
    refractive_index: complex = DEFAULT_INDEX_GRATING
    refractive_index_trap: complex = DEFAULT_INDEX_TRAP
    absorption_cross_section_trap: float = 0.0

    def __post_init__(self):
        if not (self.mass > 0):
            raise ModelError(f"mass must be positive, got {self.mass!r}")
        if not (self.density > 0):
            raise ModelError(f"density must be positive, got {self.density!r}")
        if self.radius is None:
            object.__setattr__(self, "radius", derive_radius(self.mass, self.density))
        elif not (self.radius > 0):
            raise ModelError(f"radius must be positive, got {self.radius!r}")
        for name in ("refractive_index", "refractive_index_trap"):
            n = complex(getattr(self, name))
            if n.imag < 0:
                raise ModelError(f"{name} must have a non-negative imaginary part")
            object.__setattr__(self, name, n)
        if self.absorption_cross_section_trap < 0:
            raise ModelError("absorption_cross_section_trap must be >= 0")

    @classmethod
    def from_radius(cls, radius, density=DEFAULT_DENSITY, **kw):
        return cls(mass=sphere_mass(radius, density), density=density, radius=radius, **kw)

    @property
    def volume(self):
        return 4.0 / 3.0 * math.pi * self.radius**3

    @property
    def polarizability(self):
        """Clausius-Mossotti polarizability at the grating wavelength."""
        return clausius_mossotti(self.radius, self.refractive_index)

    @property
    def static_polarizability_real(self):
        return self.polarizability.real

    @property
    def polarizability_trap(self):
        return clausius_mossotti(self.radius, self.refractive_index_trap)

    def with_mass(self, mass):
        """Same material, new mass; the radius follows from the density."""
        return replace(self, mass=mass, radius=None)


@dataclass(frozen=True)
class GratingSpec:
    """Pulsed standing-wave grating formed by a retro-reflected UV pulse.

    ``pulse_energy`` and ``spot_area`` refer to a single pass of the pulse;
    the standing wave has field amplitude ``2 E_1`` at an antinode, where
    ``E_1`` is the running-wave amplitude.
    """

    wavelength: float = 213e-9
    pulse_energy: float = 1e-6
    spot_area: float = 1e-9
    pulse_duration: float = 10e-9
    field_amplitude: Optional[float] = None

    def __post_init__(self):
        if not (self.wavelength > 0):
            raise ModelError("grating wavelength must be positive")
        if not (self.pulse_energy > 0):
            raise ModelError("pulse_energy must be positive")
        if not (self.spot_area > 0):
            raise ModelError("spot_area must be positive")
        if not (self.pulse_duration > 0):
            raise ModelError("pulse_duration must be positive")
        if self.field_amplitude is None:
            # square pulse: running-wave intensity E_G / (a_G tau)
            intensity = self.pulse_energy / (self.spot_area * self.pulse_duration)
            e1 = math.sqrt(2.0 * intensity / (C_LIGHT * EPS0))
            object.__setattr__(self, "field_amplitude", 2.0 * e1)

    @property
    def period(self):
        return self.wavelength / 2.0

    @property
    def wavenumber(self):
        return 2.0 * math.pi / self.wavelength

    @property
    def angular_frequency(self):
        return C_LIGHT * self.wavenumber

    @property
    def fluence(self):
        """Single-pass fluence E_G / a_G."""
        return self.pulse_energy / self.spot_area

    @property
    def photon_energy(self):
        return HBAR * self.angular_frequency

    def with_pulse_energy(self, energy):
        return replace(self, pulse_energy=energy, field_amplitude=None)


@dataclass(frozen=True)
class TrapSpec:
    """Optical tweezer used for preparation and recapture.

    If ``waist`` is omitted it is taken as ``wavelength / (2 NA)``.
    """

    wavelength: float = 1550e-9
    power: float = 0.1
    numerical_aperture: float = 1.0
    frequency: float = 50e3
    waist: Optional[float] = None

    def __post_init__(self):
        if not (self.power > 0):
            raise ModelError("trap power must be positive")
        if not (0 < self.numerical_aperture <= 1):
            raise ModelError("numerical_aperture must lie in (0, 1]")
        if not (self.frequency > 0):
            raise ModelError("trap frequency must be positive")
        if not (self.wavelength > 0):
            raise ModelError("trap wavelength must be positive")
        if self.waist is None:
            object.__setattr__(self, "waist", self.wavelength / (2.0 * self.numerical_aperture))
        elif not (self.waist > 0):
            raise ModelError("waist must be positive")

    @property
    def rayleigh_range(self):
        return math.pi * self.waist**2 / self.wavelength

    @property
    def wavenumber(self):
        return 2.0 * math.pi / self.wavelength

    @property
    def peak_intensity(self):
        return 2.0 * self.power / (math.pi * self.waist**2)

    def with_power(self, power):
        return replace(self, power=power)


def _check_resolution(f: Callable, name: str):
    probe = np.array([0.0, 1e-12, 1e-9, 1e-7, 1e-5, 1e-3])
    vals = np.asarray(f(probe), dtype=float)
    if abs(vals[0] - 1.0) > 1e-12:
        raise ModelError(f"channel {name!r}: resolution function must satisfy f(0) = 1")
    if np.any(vals < -1e-15) or np.any(vals > 1 + 1e-15):
        raise ModelError(f"channel {name!r}: resolution function leaves [0, 1]")


@dataclass(frozen=True)
class DecoherenceChannel:
    """Environmental decoherence process: event rate and spatial resolution.

    ``resolution`` maps a path separation (m) to the overlap left after one
    event; ``resolution(0)`` must be 1.
    """

    name: str
    rate: float
    resolution: Callable = field(compare=False, repr=False)
    description: str = ""

    def __post_init__(self):
        if not (self.rate >= 0):
            raise ModelError(f"channel {self.name!r}: rate must be >= 0")
        _check_resolution(self.resolution, self.name)


@dataclass(frozen=True)
class EnvironmentSpec:
    gas_pressure: float = 1e-8
    gas_temperature: float = 300.0
    internal_temperature: float = 300.0
    environment_temperature: float = 300.0
    decoherence_channels: tuple = ()

    def __post_init__(self):
        for name in ("gas_pressure", "gas_temperature", "internal_temperature",
                     "environment_temperature"):
            if getattr(self, name) < 0:
                raise ModelError(f"{name} must be >= 0")
        object.__setattr__(self, "decoherence_channels", tuple(self.decoherence_channels))


@dataclass(frozen=True)
class FlightPlan:
    """Free-flight times before (``t1``) and after (``t2``) the grating pulse.

    ``temperature`` is the centre-of-mass temperature along the grating axis
    at release.
    """

    t1: float
    t2: float
    temperature: float = 1e-3
    kick_error_relative_sigma: float = 0.0

    def __post_init__(self):
        if not (self.t1 > 0 and self.t2 > 0):
            raise ModelError(f"flight times must be positive, got t1={self.t1!r}, t2={self.t2!r}")
        if self.temperature < 0:
            raise ModelError("temperature must be >= 0")
        if self.kick_error_relative_sigma < 0:
            raise ModelError("kick_error_relative_sigma must be >= 0")

    @classmethod
    def ballistic(cls, launch_velocity, **kw):
        """Symmetric throw: pulse at the apex, ``t1 = t2 = v0 / g``."""
        if not (launch_velocity > 0):
            raise ModelError("launch velocity must be positive")
        t = launch_velocity / G_ACCEL
        return cls(t1=t, t2=t, **kw)

    @classmethod
    def from_total_time(cls, total, **kw):
        return cls(t1=total / 2.0, t2=total / 2.0, **kw)

    @property
    def total_time(self):
        return self.t1 + self.t2

    @property
    def launch_velocity(self):
        return G_ACCEL * self.t1

    @property
    def throw_height(self):
        return self.launch_velocity**2 / (2.0 * G_ACCEL)


def throw_height(launch_velocity):
    return launch_velocity**2 / (2.0 * G_ACCEL)


def talbot_time(particle: ParticleSpec, grating: GratingSpec):
    return particle.mass * grating.period**2 / H_PLANCK


def position_spread(particle: ParticleSpec, temperature, trap_frequency):
    """Thermal position width in a harmonic trap of frequency ``trap_frequency`` (Hz)."""
    return math.sqrt(K_B * temperature / (4.0 * math.pi**2 * particle.mass * trap_frequency**2))


def momentum_spread(particle: ParticleSpec, temperature):
    return math.sqrt(particle.mass * K_B * temperature)


@dataclass(frozen=True)
class Setup:
    """Everything needed to predict one fringe pattern."""

    particle: ParticleSpec
    grating: GratingSpec
    trap: TrapSpec
    environment: EnvironmentSpec
    flight: FlightPlan

    @property
    def talbot_time(self):
        return talbot_time(self.particle, self.grating)

    @property
    def sigma_x(self):
        return position_spread(self.particle, self.flight.temperature, self.trap.frequency)

    @property
    def sigma_p(self):
        return momentum_spread(self.particle, self.flight.temperature)

    @property
    def fringe_period(self):
        f = self.flight
        return self.grating.period * (f.t1 + f.t2) / f.t1

    def source_conditions(self):
        """Coherence conditions on the initial state.

        Returns ``(sigma_x / d, sigma_p d / h)``; the first should be below 1
        and the second much larger than 1.
        """
        d = self.grating.period
        return self.sigma_x / d, self.sigma_p * d / H_PLANCK

    def replace(self, **kw):
        return replace(self, **kw)
