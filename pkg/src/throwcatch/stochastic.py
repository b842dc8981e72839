"""Monte-Carlo averaging of fringe patterns over kick-energy error and mass spread."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import repeat

import numpy as np

from .model import FlightPlan, ModelError
from .output import write_csv
from .special import make_rng
from .talbot import (Experiment, FringePattern, PatternSpectrum, channel_ledger, default_grid,
                     evaluate_density, pattern_spectrum, setup_echo, spectrum_visibility)

PARAMETERS = ("launch_velocity", "mass")
DEFAULT_SAMPLES = 2000


@dataclass(frozen=True)
class EnsembleSpec:
    """Normal spread of one parameter, truncated to ``+-truncation_sigmas`` and to positive values."""

    parameter: str
    relative_sigma: float
    n_samples: int = DEFAULT_SAMPLES
    seed: int = 0
    truncation_sigmas: float = 4.0

    def __post_init__(self):
        if self.parameter not in PARAMETERS:
            raise ValueError(f"parameter must be one of {PARAMETERS}")
        if not self.relative_sigma >= 0:
            raise ValueError("relative_sigma must be >= 0")
        if int(self.n_samples) < 1:
            raise ValueError("n_samples must be >= 1")
        if not self.truncation_sigmas > 0:
            raise ValueError("truncation_sigmas must be positive")


def draw(spec: EnsembleSpec, nominal):
    """Truncated normal samples around ``nominal`` by rejection."""
    n = int(spec.n_samples)
    if spec.relative_sigma == 0:
        return np.full(n, float(nominal))
    rng = make_rng(spec.seed)
    sigma = spec.relative_sigma * nominal
    lo = max(nominal - spec.truncation_sigmas * sigma, 0.0)
    hi = nominal + spec.truncation_sigmas * sigma
    out = np.empty(0)
    for _ in range(1000):
        batch = rng.normal(nominal, sigma, size=2 * n)
        batch = batch[(batch > lo) & (batch <= hi)]
        out = np.concatenate([out, batch])
        if len(out) >= n:
            return out[:n]
    raise ModelError("all samples fell outside the physical range")


@dataclass(frozen=True)
class EnsemblePattern:
    """Averaged pattern plus per-sample statistics."""

    pattern: FringePattern
    samples: np.ndarray
    sample_visibilities: np.ndarray
    standard_error: np.ndarray
    spec: EnsembleSpec
    metadata: dict = field(default_factory=dict, compare=False)

    @property
    def visibility_mean(self):
        return float(np.mean(self.sample_visibilities))

    @property
    def visibility_sd(self):
        if len(self.sample_visibilities) < 2:
            return 0.0
        return float(np.std(self.sample_visibilities, ddof=1))

    def visibility(self, method="max_min_central_period"):
        return spectrum_visibility(self.pattern.spectrum, method)

    def write(self, stem):
        files = self.pattern.write(stem)
        unit = "m/s" if self.spec.parameter == "launch_velocity" else "kg"
        files.append(write_csv(f"{stem}_samples.csv",
                               [np.arange(len(self.samples)), self.samples, self.sample_visibilities],
                               ["index [-]", f"{self.spec.parameter} [{unit}]", "visibility [-]"]))
        return files


def resolve_pulse_energy(experiment: Experiment):
    """Replace a target ``phi0`` by the pulse energy producing it for the nominal particle."""
    return experiment.resolved()


def _member_spectrum(ex, mode, physics):
    phys, channels = ex.inputs(mode, physics)
    return pattern_spectrum(ex.setup, phys, mode, channels, ex.n_max)


def _spectra(members, mode, physics, workers):
    if workers <= 1 or len(members) < 2 * workers:
        return [_member_spectrum(ex, mode, physics) for ex in members]
    chunk = max(1, len(members) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_member_spectrum, members, repeat(mode), repeat(physics),
                             chunksize=chunk))


def _average(members, mode, grid, spec, samples, base, physics=None, workers=1):
    spectra = _spectra(members, mode, physics, workers)
    period = spectra[0].period
    if any(abs(sp.period - period) > 1e-12 * period for sp in spectra):
        raise ValueError("ensemble members have different fringe periods; cannot average spectra")
    n_max = max(sp.n_max for sp in spectra)
    coeffs = np.stack([sp.padded(n_max).coefficients for sp in spectra])
    orders = np.arange(-n_max, n_max + 1)
    mean = PatternSpectrum(orders=orders, coefficients=coeffs.mean(axis=0), period=period,
                           info={"n_max": n_max, "mode": mode, "members": len(spectra)})
    vis = np.array([spectrum_visibility(sp).visibility for sp in spectra])

    x = default_grid(period) if grid is None else np.asarray(grid, dtype=float)
    if len(spectra) > 1:
        phase = np.exp(2j * np.pi * np.multiply.outer(orders, x) / period)
        se = (coeffs @ phase).real.std(axis=0, ddof=1) / math.sqrt(len(spectra))
    else:
        se = np.zeros_like(x)
    if len(spectra) == 1 and len(samples) > 1:
        vis = np.full(len(samples), vis[0])

    notes = []
    w = evaluate_density(mean, x, notes)
    phys, channels = base.inputs(mode, physics)
    meta = {
        "setup": setup_echo(base.setup),
        "phi0": phys.phi0, "regime": phys.regime, "size_parameter_kR": phys.size_parameter,
        "grating_photons": {"mean_scattered": phys.mean_scattered_photons,
                            "mean_absorbed": phys.mean_absorbed_photons},
        "decoherence_channels": channel_ledger(channels),
        "classical_decoherence": base.classical_decoherence,
        "ensemble": {"parameter": spec.parameter, "relative_sigma": spec.relative_sigma,
                     "n_samples": int(spec.n_samples), "seed": int(spec.seed),
                     "truncation_sigmas": spec.truncation_sigmas,
                     "visibility_mean": float(np.mean(vis)),
                     "visibility_sd": float(np.std(vis, ddof=1)) if len(vis) > 1 else 0.0},
        "spectrum": mean.info,
        "warnings": list(phys.warnings) + notes,
    }
    pattern = FringePattern(x=x, w=w, period=period, spectrum=mean, mode=mode, metadata=meta)
    return EnsemblePattern(pattern=pattern, samples=samples, sample_visibilities=vis,
                           standard_error=se, spec=spec, metadata=meta)


def kick_error_ensemble(experiment: Experiment, spec: EnsembleSpec, mode="quantum", grid=None,
                        workers=1):
    """Average over launch velocities; the grating fires at each member's apex.

    ``workers > 1`` spreads members over processes; results do not depend on it.
    """
    if spec.parameter != "launch_velocity":
        raise ValueError("kick_error_ensemble needs parameter='launch_velocity'")
    base = resolve_pulse_energy(experiment)
    f = base.setup.flight
    if abs(f.t1 - f.t2) > 1e-12 * f.t1:
        raise ValueError("kick-error ensembles need a symmetric ballistic flight (t1 = t2)")
    samples = draw(spec, f.launch_velocity)
    # zero spread: every member is the nominal one, evaluate it once
    values = samples[:1] if spec.relative_sigma == 0 else samples
    members = [base.with_setup(flight=FlightPlan.ballistic(
        float(v), temperature=f.temperature, kick_error_relative_sigma=spec.relative_sigma))
        for v in values]
    physics = base.inputs(mode)[0]  # the grating does not depend on the flight
    return _average(members, mode, grid, spec, samples, base, physics, workers)


def mass_spread_ensemble(experiment: Experiment, spec: EnsembleSpec, mode="quantum", grid=None,
                         workers=1):
    """Average over particle masses at fixed pulse energy and flight times.

    Every member recomputes radius, optical response, phase modulation,
    Talbot time, thermal widths and collision rates.
    """
    if spec.parameter != "mass":
        raise ValueError("mass_spread_ensemble needs parameter='mass'")
    base = resolve_pulse_energy(experiment)
    particle = base.setup.particle
    samples = draw(spec, particle.mass)
    values = samples[:1] if spec.relative_sigma == 0 else samples
    members = [base.with_setup(particle=particle.with_mass(float(m))) for m in values]
    return _average(members, mode, grid, spec, samples, base, workers=workers)
