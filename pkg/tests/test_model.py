import math

import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq

from throwcatch import mie, model, recapture
from throwcatch.model import (AMU, FlightPlan, GratingSpec, ModelError, ParticleSpec, Setup,
                              TrapSpec, EnvironmentSpec, derive_radius, sphere_mass, talbot_time)

# independent constant set for the oracles below
H_CODATA = 6.62607015e-34
AMU_CODATA = 1.66053906660e-27


class TestRadius:
    def test_heavy_particle_size_parameter(self):
        r = derive_radius(1e8 * AMU, 1850.0)
        assert r == pytest.approx(2.78e-8, rel=5e-3)
        assert 2 * math.pi / 213e-9 * r == pytest.approx(0.83, abs=0.015)

    def test_unit_sphere(self):
        assert derive_radius(4 / 3 * math.pi, 1.0) == pytest.approx(1.0, rel=1e-15)

    def test_hundred_nanometre_sphere(self):
        # invert the volume formula by root finding rather than the cube root
        oracle = brentq(lambda r: 1850.0 * 4 / 3 * math.pi * r**3 - 9.7e-19, 1e-9, 1e-6, xtol=1e-22)
        assert derive_radius(9.7e-19, 1850.0) == pytest.approx(oracle, rel=1e-12)
        assert oracle == pytest.approx(5.0e-8, rel=0.01)

    @pytest.mark.parametrize("mass, density", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0), (1.0, -2.0)])
    def test_domain(self, mass, density):
        with pytest.raises(ModelError):
            derive_radius(mass, density)

    @given(st.floats(1e-22, 1e-12), st.floats(100.0, 2e4))
    def test_mass_volume_round_trip(self, mass, density):
        p = ParticleSpec(mass=mass, density=density)
        assert p.density * 4 / 3 * math.pi * p.radius**3 == pytest.approx(mass, rel=1e-9)
        assert sphere_mass(p.radius, density) == pytest.approx(mass, rel=1e-9)


class TestTalbotTime:
    def test_heavy(self):
        assert talbot_time(ParticleSpec(mass=1e8 * AMU), GratingSpec()) == pytest.approx(2.84, rel=5e-3)

    def test_light_against_codata(self):
        oracle = 1e6 * AMU_CODATA * (106.5e-9) ** 2 / H_CODATA
        assert talbot_time(ParticleSpec(mass=1e6 * AMU), GratingSpec()) == pytest.approx(oracle, rel=1e-8)
        assert oracle == pytest.approx(28.4e-3, rel=5e-3)

    def test_quadratic_in_period(self):
        p = ParticleSpec(mass=1e-20)
        t1 = talbot_time(p, GratingSpec(wavelength=200e-9))
        t2 = talbot_time(p, GratingSpec(wavelength=400e-9))
        assert t2 == pytest.approx(4 * t1, rel=1e-14)


class TestSpecs:
    def test_particle_validation(self):
        with pytest.raises(ModelError):
            ParticleSpec(mass=1e-20, refractive_index=complex(1.5, -0.1))
        with pytest.raises(ModelError):
            ParticleSpec(mass=1e-20, radius=-1.0)
        with pytest.raises(ModelError):
            ParticleSpec(mass=1e-20, absorption_cross_section_trap=-1.0)

    def test_grating_period_is_half_wavelength(self):
        g = GratingSpec(wavelength=213e-9)
        assert g.period == 213e-9 / 2
        assert g.wavenumber == pytest.approx(2 * math.pi / 213e-9, rel=1e-15)
        for bad in (dict(pulse_energy=0.0), dict(spot_area=-1.0), dict(wavelength=0.0)):
            with pytest.raises(ModelError):
                GratingSpec(**bad)

    def test_trap_validation_and_waist(self):
        assert TrapSpec(wavelength=1550e-9, numerical_aperture=0.5).waist == pytest.approx(1550e-9)
        for bad in (dict(power=0.0), dict(numerical_aperture=1.2), dict(numerical_aperture=0.0),
                    dict(waist=-1e-6)):
            with pytest.raises(ModelError):
                TrapSpec(**bad)

    def test_environment_validation(self):
        with pytest.raises(ModelError):
            EnvironmentSpec(gas_pressure=-1.0)

    def test_flight_validation(self):
        with pytest.raises(ModelError):
            FlightPlan(t1=0.0, t2=1.0)
        with pytest.raises(ModelError):
            FlightPlan.ballistic(-1.0)

    @given(st.floats(1e-3, 50.0))
    def test_ballistic_consistency(self, v0):
        f = FlightPlan.ballistic(v0)
        assert f.t1 == f.t2
        assert f.t1 == pytest.approx(v0 / 9.81, rel=1e-12)
        assert v0**2 == pytest.approx(2 * 9.81 * f.throw_height, rel=1e-12)

    def test_thermal_widths_and_source_conditions(self):
        s = Setup(ParticleSpec(mass=1e6 * AMU), GratingSpec(), TrapSpec(), EnvironmentSpec(),
                  FlightPlan.from_total_time(0.058, temperature=1e-3))
        kt = 1.380649e-23 * 1e-3
        assert s.sigma_x == pytest.approx(math.sqrt(kt / (4 * math.pi**2 * s.particle.mass * 50e3**2)))
        assert s.sigma_p == pytest.approx(math.sqrt(s.particle.mass * kt))
        ratio_x, ratio_p = s.source_conditions()
        assert ratio_x < 1 and ratio_p > 100

    def test_derived_quantities_idempotent(self):
        s = Setup(ParticleSpec(mass=1e7 * AMU), GratingSpec(), TrapSpec(), EnvironmentSpec(),
                  FlightPlan(0.02, 0.03))
        assert (s.talbot_time, s.sigma_x, s.fringe_period) == (s.talbot_time, s.sigma_x, s.fringe_period)
        assert s.fringe_period == pytest.approx(s.grating.period * 0.05 / 0.02)


# --------------------------------------------------------------------------
# unit audit: change the unit system and check every output transforms with
# the dimension it is declared to carry

L, M, T, Q, K = "L", "M", "T", "Q", "K"
SCALE = {L: 1e-3, M: 7.0, T: 0.3, Q: 5.0, K: 2.0}

CONSTANTS = {
    "H_PLANCK": {M: 1, L: 2, T: -1},
    "HBAR": {M: 1, L: 2, T: -1},
    "K_B": {M: 1, L: 2, T: -2, K: -1},
    "C_LIGHT": {L: 1, T: -1},
    "EPS0": {Q: 2, T: 2, M: -1, L: -3},
    "G_ACCEL": {L: 1, T: -2},
}


def factor(dims):
    """Numeric value in the new units = SI value * factor(dims)."""
    out = 1.0
    for base, power in dims.items():
        out *= SCALE[base] ** (-power)
    return out


@pytest.fixture
def rescaled_units(monkeypatch):
    for module in (model, mie, recapture):
        for name, dims in CONSTANTS.items():
            if hasattr(module, name):
                monkeypatch.setattr(module, name, getattr(module, name) * factor(dims))


LENGTH, MASS, TIME = {L: 1}, {M: 1}, {T: 1}
DENSITY = {M: 1, L: -3}
FREQ = {T: -1}
ENERGY = {M: 1, L: 2, T: -2}


def particle(u):
    return ParticleSpec(mass=2e-19 * u(MASS), density=1850.0 * u(DENSITY))


def trap(u):
    return TrapSpec(wavelength=1550e-9 * u(LENGTH), power=0.1 * u({M: 1, L: 2, T: -3}),
                    frequency=50e3 * u(FREQ))


def grating(u):
    return GratingSpec(wavelength=213e-9 * u(LENGTH), pulse_energy=1e-6 * u(ENERGY),
                       spot_area=1e-9 * u({L: 2}), pulse_duration=1e-8 * u(TIME))


CASES = [
    ("radius", lambda u: derive_radius(2e-19 * u(MASS), 1850.0 * u(DENSITY)), LENGTH),
    ("sphere mass", lambda u: sphere_mass(5e-8 * u(LENGTH), 1850.0 * u(DENSITY)), MASS),
    ("polarizability", lambda u: particle(u).polarizability.real, {Q: 2, T: 2, M: -1}),
    ("talbot time", lambda u: talbot_time(particle(u), grating(u)), TIME),
    ("position spread", lambda u: model.position_spread(particle(u), 1e-3 * u({K: 1}), 5e4 * u(FREQ)), LENGTH),
    ("momentum spread", lambda u: model.momentum_spread(particle(u), 1e-3 * u({K: 1})), {M: 1, L: 1, T: -1}),
    ("throw height", lambda u: model.throw_height(1.0 * u({L: 1, T: -1})), LENGTH),
    ("field amplitude", lambda u: grating(u).field_amplitude, {M: 1, L: 1, T: -2, Q: -1}),
    ("rayleigh phase", lambda u: mie.phase_modulation(particle(u), grating(u), "rayleigh", force=True), {}),
    ("barrier", lambda u: recapture.potential_barrier(3e-7 * u(LENGTH), trap(u), particle(u)), ENERGY),
    ("flight time", lambda u: recapture.flight_time(0.1 * u(LENGTH)), TIME),
    ("stoppable speed", lambda u: recapture.max_stoppable_velocity(
        8.4e-13 * u({M: 1, L: 1, T: -2}), 1.9e-6 * u(LENGTH), 2.2e-17 * u(MASS)), {L: 1, T: -1}),
    ("ground temperature", lambda u: recapture.ground_state_temperature(5e4 * u(FREQ)), {K: 1}),
    ("rms displacement", lambda u: recapture.rms_displacement(
        1e-6 * u({K: 1}), 1e-18 * u(MASS), 3e5 * u(FREQ)), LENGTH),
    ("transverse speed", lambda u: recapture.transverse_constraint(
        0.1 * u(LENGTH), trap(u), particle(u)).v_x_max, {L: 1, T: -1}),
]


@pytest.mark.parametrize("name, fn, dims", CASES, ids=[c[0] for c in CASES])
def test_unit_audit(name, fn, dims, rescaled_units, monkeypatch):
    new = fn(factor)
    monkeypatch.undo()
    si = fn(lambda d: 1.0)
    assert new == pytest.approx(si * factor(dims), rel=1e-9)
