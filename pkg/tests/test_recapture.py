import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from throwcatch.mie import RegimeError, RegimeWarning
from throwcatch.model import ParticleSpec, TrapSpec
from throwcatch.recapture import (OscillatorParams, axial_forces, fit_reentry, flight_time,
                                  ground_state_temperature, max_stoppable_velocity,
                                  potential_barrier, profile_max_velocity, recapture_report,
                                  reentry_trials, required_power, rms_displacement,
                                  synthesize_and_fit_reentry, synthesize_reentry_trace,
                                  transverse_constraint)

C_EXACT = 299792458.0
KB_CODATA = 1.380649e-23
HBAR_CODATA = 1.054571817e-34

TRAP = TrapSpec()
SPHERE = ParticleSpec.from_radius(50e-9)  # 100 nm diameter
BRAKED = ParticleSpec(mass=2.2e-17)


def axial(trap=TRAP, **kw):
    with pytest.warns(RegimeWarning):
        return axial_forces(trap, BRAKED, force_rayleigh=True, **kw)


@pytest.fixture(scope="module")
def profile():
    return axial()


class TestBarrier:
    def test_shape(self):
        u0 = potential_barrier(0.0, TRAP, SPHERE)
        assert potential_barrier(TRAP.waist, TRAP, SPHERE) / u0 == pytest.approx(math.exp(-2), rel=1e-14)
        x = np.linspace(-3e-6, 3e-6, 101)
        assert np.all(potential_barrier(x, TRAP, SPHERE) <= u0)

    def test_linear_in_power(self):
        x = np.linspace(0, 2e-6, 7)
        double = potential_barrier(x, TRAP.with_power(2 * TRAP.power), SPHERE)
        assert np.allclose(double, 2 * potential_barrier(x, TRAP, SPHERE), rtol=1e-14)

    def test_depth_against_direct_formula(self):
        # epsilon_0 cancels: U0 = 4 R^3 chi P / (c w0^2)
        eps = 1.444**2
        chi = (eps - 1) / (eps + 2)
        w0 = 1550e-9 / 2
        oracle = 4 * (50e-9) ** 3 * chi * 0.1 / (C_EXACT * w0**2)
        assert potential_barrier(0.0, TRAP, SPHERE) == pytest.approx(oracle, rel=1e-12)


class TestTransverse:
    def test_flight_time(self):
        assert flight_time(0.1) * 1e3 == pytest.approx(285.6, abs=0.1)
        assert flight_time(0.0) == 0.0
        with pytest.raises(ValueError):
            flight_time(-1.0)

    def test_thresholds(self):
        tc = transverse_constraint(0.1, TRAP, SPHERE)
        assert tc.feasible
        assert tc.x_max == pytest.approx(2.4e-6, rel=0.15)
        assert tc.v_x_max == pytest.approx(8.5e-6, rel=0.15)
        assert tc.T_max == pytest.approx(5e-6, rel=0.15)
        assert tc.residual < 1e-12 * potential_barrier(0.0, TRAP, SPHERE)

    def test_energy_bookkeeping(self):
        tc = transverse_constraint(0.1, TRAP, SPHERE)
        kinetic = 0.5 * SPHERE.mass * tc.v_x_max**2
        assert kinetic == pytest.approx(potential_barrier(tc.x_max, TRAP, SPHERE), rel=1e-10)
        assert tc.T_max == pytest.approx(2 * kinetic / KB_CODATA, rel=1e-9)
        assert tc.x_max == pytest.approx(tc.v_x_max * tc.total_time, rel=1e-14)

    def test_more_power_tolerates_more(self):
        a = transverse_constraint(0.1, TRAP, SPHERE)
        b = transverse_constraint(0.1, TRAP.with_power(4 * TRAP.power), SPHERE)
        assert b.v_x_max > a.v_x_max and b.x_max > a.x_max

    @given(st.floats(0.01, 1.0))
    def test_higher_throws_tolerate_less(self, h):
        a = transverse_constraint(h, TRAP, SPHERE)
        b = transverse_constraint(2 * h, TRAP, SPHERE)
        assert b.v_x_max < a.v_x_max

    def test_no_barrier_is_reported(self):
        bubble = ParticleSpec.from_radius(50e-9, refractive_index_trap=1.0)
        tc = transverse_constraint(0.1, TRAP, bubble)
        assert not tc.feasible and tc.message


class TestAxial:
    def test_gradient_vanishes_at_focus(self, profile):
        i = int(np.argmin(np.abs(profile.z)))
        assert profile.z[i] == 0.0
        assert abs(profile.f_grad[i]) < 1e-12 * np.max(np.abs(profile.f_grad))
        assert np.all(profile.f_scat > 0)

    def test_single_balance_point_before_focus(self, profile):
        before = profile.z < 0
        sign = np.sign(profile.f_net[before])
        assert np.count_nonzero(np.diff(sign) != 0) == 1
        assert profile.boundary_I_II < 0

    def test_boundary_and_average_force(self, profile):
        assert -profile.boundary_I_II == pytest.approx(145e-9, rel=0.5)
        assert profile.f_avg == pytest.approx(-0.84e-12, rel=0.5)
        assert profile.f_avg < 0 and profile.peak_force <= profile.f_avg

    def test_grid_refinement(self, profile):
        fine = axial(points=24001)
        assert fine.boundary_I_II == pytest.approx(profile.boundary_I_II, rel=1e-4)
        assert fine.f_avg == pytest.approx(profile.f_avg, rel=1e-4)
        assert fine.region_III_end == pytest.approx(profile.region_III_end, rel=1e-3)

    def test_forces_linear_in_power(self, profile):
        strong = axial(TRAP.with_power(4 * TRAP.power))
        assert np.allclose(strong.f_grad, 4 * profile.f_grad, rtol=1e-12, atol=0)
        assert strong.f_avg == pytest.approx(4 * profile.f_avg, rel=1e-10)
        assert profile_max_velocity(strong, BRAKED.mass) == pytest.approx(
            2 * profile_max_velocity(profile, BRAKED.mass), rel=1e-10)

    def test_regime_enforced(self):
        with pytest.raises(RegimeError):
            axial_forces(TRAP, BRAKED)
        small = ParticleSpec.from_radius(20e-9)
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            axial_forces(TRAP, small)


class TestBraking:
    def test_braking_speed(self):
        v = max_stoppable_velocity(8.4e-13, 1.9e-6, 2.2e-17)
        assert v == pytest.approx(0.38, abs=0.005)
        assert max_stoppable_velocity(-8.4e-13, 1.9e-6, 2.2e-17) == v
        assert max_stoppable_velocity(4 * 8.4e-13, 1.9e-6, 2.2e-17) == pytest.approx(2 * v)
        assert max_stoppable_velocity(8.4e-13, 0.0, 2.2e-17) == 0.0

    def test_required_power(self):
        assert required_power(0.38, 0.1, 0.38) == pytest.approx(0.1)
        p = required_power(1.4, 0.1, 0.38)
        assert p == pytest.approx(1.36, rel=0.01)
        assert p == pytest.approx(1.5, rel=0.15)
        assert required_power(2.8, 0.1, 0.38) == pytest.approx(4 * p)
        with pytest.raises(ValueError):
            required_power(0.0, 0.1, 0.38)

    def test_ground_state(self):
        t = ground_state_temperature(50e3)
        assert t == pytest.approx(HBAR_CODATA * 2 * math.pi * 50e3 / KB_CODATA, rel=1e-9)
        assert t == pytest.approx(2.2e-6, rel=0.1)

    def test_rms_displacement(self):
        x = rms_displacement(1e-6, 1e-18, 2e5)
        assert rms_displacement(1e-6, 1e-18, 1e5) == pytest.approx(2 * x)
        assert rms_displacement(0.0, 1e-18, 1e5) == 0.0

    def test_report(self):
        r = recapture_report(0.1, TRAP, SPHERE, axial_particle=BRAKED, force_rayleigh=True)
        assert r.return_speed == pytest.approx(math.sqrt(2 * 9.81 * 0.1))
        assert r.required_power == pytest.approx(1.5, rel=0.15)
        assert any("kR" in w for w in r.warnings)
        d = r.as_dict()
        assert set(d) >= {"transverse", "axial", "required_power_W", "v_max_m_per_s"}


class TestReentry:
    def test_noiseless_recovery(self):
        fit = synthesize_and_fit_reentry(100e-9, noise_asd=0.0)
        assert fit.success
        assert abs(fit.estimate - 100e-9) < 0.1e-9

    def test_trace_noise_level(self):
        tr = synthesize_reentry_trace(0.0, OscillatorParams(entry_velocity=0.0), noise_asd=1e-9,
                                      seed=2)
        assert np.std(tr.z) == pytest.approx(1e-9 * math.sqrt(250e3 / 2), rel=0.02)

    def test_window_robustness(self):
        est = [synthesize_and_fit_reentry(100e-9, window=w, seed=7).estimate for w in (0.05, 0.1, 0.2)]
        assert max(est) - min(est) < 15e-9

    def test_seeded(self):
        a = synthesize_and_fit_reentry(100e-9, seed=3)
        b = synthesize_and_fit_reentry(100e-9, seed=3)
        assert a == b

    def test_workers_do_not_change_result(self):
        seeds = range(8)
        assert reentry_trials(100e-9, seeds) == reentry_trials(100e-9, seeds, workers=2)

    def test_failed_fit_is_flagged(self):
        # noise only: whatever the optimiser settles on is not the trap oscillation
        for seed in range(3):
            tr = synthesize_reentry_trace(0.0, OscillatorParams(entry_velocity=0.0),
                                          noise_asd=1e-6, seed=seed)
            fit = fit_reentry(tr, frequency=50e3)
            assert not fit.success and "frequency" in fit.message

    def test_silent_trace_is_flagged(self):
        tr = synthesize_reentry_trace(0.0, OscillatorParams(entry_velocity=0.0), noise_asd=0.0)
        assert not fit_reentry(tr, frequency=50e3).success

    def test_short_window_rejected(self):
        with pytest.raises(ValueError):
            synthesize_and_fit_reentry(100e-9, window=5e-5)
