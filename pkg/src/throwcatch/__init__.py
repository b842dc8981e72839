"""Simulator for a throw-and-catch Talbot-Lau nanoparticle interferometer."""

__version__ = "0.1.0"

from .model import (EnvironmentSpec, FlightPlan, GratingSpec, ModelError, ParticleSpec, Setup,
                    TrapSpec)
from .talbot import Experiment, FringePattern

__all__ = ["EnvironmentSpec", "Experiment", "FlightPlan", "FringePattern", "GratingSpec",
           "ModelError", "ParticleSpec", "Setup", "TrapSpec", "__version__"]
