import math

import pytest
from hypothesis import HealthCheck, settings

from throwcatch.model import (AMU, EnvironmentSpec, FlightPlan, GratingSpec, ParticleSpec, Setup,
                              TrapSpec)
from throwcatch.talbot import Experiment

settings.register_profile("suite", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("suite")


def reference(mass_amu, total_time, phi0):
    setup = Setup(ParticleSpec(mass=mass_amu * AMU), GratingSpec(), TrapSpec(),
                  EnvironmentSpec(gas_pressure=1e-8), FlightPlan.from_total_time(total_time))
    return Experiment(setup, regime="mie", phi0=phi0)


@pytest.fixture(scope="session")
def light():
    """Light (1e6 amu) reference experiment."""
    return reference(1e6, 0.058, math.pi / 2)


@pytest.fixture(scope="session")
def heavy():
    """Heavy (1e8 amu) reference experiment."""
    return reference(1e8, 0.142, 8 * math.pi)
