"""Configuration files: TOML in laboratory units, validated into model objects.

This is the only place where lab units (amu, nm, mbar, mK, ms, ...) are
converted to SI.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import tomli

from .model import (AMU, EnvironmentSpec, FlightPlan, GratingSpec, ModelError, ParticleSpec,
                    Setup, TrapSpec)
from .talbot import MODES, REGIMES, VISIBILITY_METHODS, Experiment

COMMANDS = ("pattern", "sweep-phi", "sweep-time", "kick-error", "mass-spread", "recapture",
            "reentry")
CHANNEL_PRESETS = ("gas", "blackbody")
PRESETS = {"table1-1e6": "table1_1e6amu.toml", "table1-1e8": "table1_1e8amu.toml"}


class ConfigError(ValueError):
    """Invalid configuration; ``problems`` lists every violation found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


# --------------------------------------------------------------------------
# schema: section -> key -> (kind, default); a default of None means optional

_REQ = object()

SCHEMA = {
    "experiment": {
        "command": ("str", "pattern"),
        "regime": ("str", "mie"),
        "phi0_pi": ("float", None),
        "n_max": ("int", 40),
        "grating_decoherence": ("bool", True),
        "classical_decoherence": ("bool", False),
        "channels": ("strlist", ["gas"]),
        "force_rayleigh": ("bool", False),
        "infrared_permittivity": ("complex", [2.1, 0.6]),
        "angular_grid": ("intlist", [256, 256]),
        "modes": ("strlist", ["quantum", "classical"]),
        "visibility": ("str", "max_min_central_period"),
        "seed": ("int", 0),
    },
    "particle": {
        "mass_amu": ("float", _REQ),
        "density_kg_m3": ("float", 1850.0),
        "radius_nm": ("float", None),
        "refractive_index": ("complex", [1.54, 0.0]),
        "refractive_index_trap": ("complex", [1.444, 0.0]),
        "absorption_cross_section_trap_m2": ("float", 0.0),
    },
    "grating": {
        "wavelength_nm": ("float", 213.0),
        "pulse_energy_uJ": ("float", 1.0),
        "spot_area_mm2": ("float", 1e-3),
        "pulse_duration_ns": ("float", 10.0),
    },
    "trap": {
        "wavelength_nm": ("float", 1550.0),
        "power_mW": ("float", 100.0),
        "numerical_aperture": ("float", 1.0),
        "frequency_kHz": ("float", 50.0),
        "waist_nm": ("float", None),
    },
    "environment": {
        "pressure_mbar": ("float", 1e-10),
        "gas_temperature_K": ("float", 300.0),
        "internal_temperature_K": ("float", 300.0),
        "environment_temperature_K": ("float", 300.0),
    },
    "flight": {
        "total_time_ms": ("float", None),
        "t1_ms": ("float", None),
        "t2_ms": ("float", None),
        "temperature_mK": ("float", 1.0),
    },
    "grid": {
        "periods": ("int", 4),
        "points_per_period": ("int", 200),
    },
    "sweep_phi": {
        "start_pi": ("float", 0.0),
        "stop_pi": ("float", 8.0),
        "points": ("int", 33),
    },
    "sweep_time": {
        "start_ms": ("float", 10.0),
        "stop_ms": ("float", 200.0),
        "points": ("int", 39),
    },
    "kick_error": {
        "relative_sigmas": ("floatlist", [0.0, 0.1, 0.2, 0.3]),
        "samples": ("int", 2000),
        "truncation_sigmas": ("float", 4.0),
    },
    "mass_spread": {
        "relative_sigmas": ("floatlist", [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]),
        "samples": ("int", 2000),
        "truncation_sigmas": ("float", 4.0),
    },
    "recapture": {
        "height_m": ("float", 0.1),
        "transverse_radius_nm": ("float", 50.0),
        "axial_mass_kg": ("float", 2.2e-17),
        "return_speed_m_s": ("float", None),
        "window_um": ("floatlist", [-3.0, 3.0]),
        "points": ("int", 6001),
        "threshold": ("float", 0.5),
        "force_rayleigh": ("bool", True),
        "speed_range_m_s": ("floatlist", [0.1, 2.0]),
        "speed_points": ("int", 40),
    },
    "reentry": {
        "true_entry_nm": ("float", 100.0),
        "damping_rate_per_s": ("float", 10.0),
        "entry_velocity_m_s": ("float", 1e-3),
        "noise_asd_nm": ("float", 1.0),
        "window_s": ("float", 0.1),
        "sample_rate_kHz": ("float", 250.0),
        "trials": ("int", 500),
    },
}


def _check_kind(kind, value):
    if kind == "float":
        return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    if kind == "int":
        return isinstance(value, int) and not isinstance(value, bool)
    if kind == "bool":
        return isinstance(value, bool)
    if kind == "str":
        return isinstance(value, str)
    if kind == "strlist":
        return isinstance(value, list) and all(isinstance(v, str) for v in value)
    if kind == "intlist":
        return isinstance(value, list) and all(_check_kind("int", v) for v in value)
    if kind == "floatlist":
        return isinstance(value, list) and all(_check_kind("float", v) for v in value)
    if kind == "complex":
        return isinstance(value, list) and len(value) == 2 and all(_check_kind("float", v) for v in value)
    raise AssertionError(kind)


def _coerce(kind, value):
    if kind == "float":
        return float(value)
    if kind == "floatlist":
        return [float(v) for v in value]
    if kind == "complex":
        return [float(v) for v in value]
    return copy.deepcopy(value)


# --------------------------------------------------------------------------
# reading

def preset_path(name):
    if name not in PRESETS:
        raise ConfigError([f"unknown preset {name!r}; available: {', '.join(PRESETS)}"])
    return resources.files("throwcatch") / "presets" / PRESETS[name]


def read_config(source):
    """Raw tree from a file path or a preset name."""
    if isinstance(source, str) and source in PRESETS:
        text = preset_path(source).read_text(encoding="utf-8")
    else:
        path = Path(source)
        if not path.is_file():
            raise ConfigError([f"config file {str(source)!r} not found"])
        text = path.read_text(encoding="utf-8")
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError([f"TOML syntax: {exc}"]) from None


def _parse_value(text):
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def apply_overrides(tree, overrides):
    """``section.key=value`` assignments; values use TOML syntax, bare words are strings."""
    tree = copy.deepcopy(tree)
    problems = []
    for item in overrides or ():
        key, sep, value = item.partition("=")
        parts = key.strip().split(".")
        if not sep or len(parts) != 2 or not all(parts):
            problems.append(f"override {item!r} must look like section.key=value")
            continue
        tree.setdefault(parts[0], {})
        if not isinstance(tree[parts[0]], dict):
            problems.append(f"override {item!r}: {parts[0]!r} is not a section")
            continue
        tree[parts[0]][parts[1]] = _parse_value(value.strip())
    if problems:
        raise ConfigError(problems)
    return tree


# --------------------------------------------------------------------------
# validation

@dataclass(frozen=True)
class RunConfig:
    """Validated configuration: the normalised tree plus the model built from it."""

    tree: dict = field(compare=False)
    experiment: Experiment

    def section(self, name):
        return self.tree[name]

    @property
    def command(self):
        return self.tree["experiment"]["command"]

    @property
    def seed(self):
        return self.tree["experiment"]["seed"]

    @property
    def modes(self):
        return tuple(self.tree["experiment"]["modes"])


def normalise(tree):
    """Fill defaults and check types; returns ``(normalised, problems)``."""
    problems = []
    out = {}
    if not isinstance(tree, dict):
        return {}, ["configuration must be a table"]
    for name in tree:
        if name not in SCHEMA:
            problems.append(f"unknown section [{name}]")
    for name, keys in SCHEMA.items():
        given = tree.get(name, {})
        if not isinstance(given, dict):
            problems.append(f"[{name}] must be a table")
            given = {}
        sec = {}
        for key in given:
            if key not in keys:
                problems.append(f"unknown key {name}.{key}")
        for key, (kind, default) in keys.items():
            if key in given:
                value = given[key]
                if not _check_kind(kind, value):
                    problems.append(f"{name}.{key} must be of type {kind}, got {value!r}")
                    continue
                sec[key] = _coerce(kind, value)
            elif default is _REQ:
                problems.append(f"missing required key {name}.{key}")
            elif default is not None:
                sec[key] = _coerce(kind, default)
        out[name] = sec
    return out, problems


def _positive(problems, sec, name, keys):
    for key in keys:
        if key in sec and not sec[key] > 0:
            problems.append(f"{name}.{key} must be positive, got {sec[key]!r}")


def _sweep_problems(tree):
    problems = []
    e = tree.get("experiment", {})
    if e.get("command") not in COMMANDS:
        problems.append(f"experiment.command must be one of {COMMANDS}, got {e.get('command')!r}")
    if "regime" in e and e["regime"] not in REGIMES:
        problems.append(f"experiment.regime must be one of {REGIMES}")
    for m in e.get("modes", []):
        if m not in MODES:
            problems.append(f"experiment.modes: unknown mode {m!r}")
    if "modes" in e and not e["modes"]:
        problems.append("experiment.modes must not be empty")
    for c in e.get("channels", []):
        if c not in CHANNEL_PRESETS:
            problems.append(f"experiment.channels: unknown channel {c!r}")
    if "visibility" in e and e["visibility"] not in VISIBILITY_METHODS:
        problems.append(f"experiment.visibility must be one of {VISIBILITY_METHODS}")
    if "phi0_pi" in e and e["phi0_pi"] < 0:
        problems.append("experiment.phi0_pi must be >= 0")
    if "n_max" in e and not 1 <= e["n_max"] <= 200:
        problems.append("experiment.n_max must lie in [1, 200]")
    if "angular_grid" in e and (len(e["angular_grid"]) != 2 or min(e["angular_grid"], default=0) < 8):
        problems.append("experiment.angular_grid must be two integers >= 8")
    if "seed" in e and e["seed"] < 0:
        problems.append("experiment.seed must be >= 0")

    g = tree.get("grid", {})
    if g.get("periods", 4) < 3:
        problems.append("grid.periods must be >= 3")
    if g.get("points_per_period", 200) < 8:
        problems.append("grid.points_per_period must be >= 8")

    s = tree.get("sweep_phi", {})
    if s.get("points", 1) < 1:
        problems.append("sweep_phi.points must be >= 1 (empty sweep)")
    if s.get("start_pi", 0) < 0 or s.get("stop_pi", 0) < s.get("start_pi", 0):
        problems.append("sweep_phi range must satisfy 0 <= start_pi <= stop_pi")
    s = tree.get("sweep_time", {})
    if s.get("points", 1) < 1:
        problems.append("sweep_time.points must be >= 1 (empty sweep)")
    if not 0 < s.get("start_ms", 1) <= s.get("stop_ms", 1):
        problems.append("sweep_time range must satisfy 0 < start_ms <= stop_ms")
    for name in ("kick_error", "mass_spread"):
        s = tree.get(name, {})
        if "relative_sigmas" in s and not s["relative_sigmas"]:
            problems.append(f"{name}.relative_sigmas must not be empty")
        if any(v < 0 for v in s.get("relative_sigmas", [])):
            problems.append(f"{name}.relative_sigmas must be >= 0")
        _positive(problems, s, name, ("samples", "truncation_sigmas"))
    r = tree.get("recapture", {})
    _positive(problems, r, "recapture", ("height_m", "transverse_radius_nm", "axial_mass_kg",
                                         "return_speed_m_s", "points"))
    w = r.get("window_um", [-3.0, 3.0])
    if len(w) != 2 or not w[0] < 0 < w[1]:
        problems.append("recapture.window_um must be [lo, hi] with lo < 0 < hi")
    if not 0 < r.get("threshold", 0.5) < 1:
        problems.append("recapture.threshold must lie in (0, 1)")
    sr = r.get("speed_range_m_s", [0.1, 2.0])
    if len(sr) != 2 or not 0 < sr[0] <= sr[1]:
        problems.append("recapture.speed_range_m_s must be [lo, hi] with 0 < lo <= hi")
    if r.get("speed_points", 1) < 1:
        problems.append("recapture.speed_points must be >= 1 (empty sweep)")
    q = tree.get("reentry", {})
    _positive(problems, q, "reentry", ("window_s", "sample_rate_kHz", "trials"))
    if q.get("noise_asd_nm", 0) < 0 or q.get("damping_rate_per_s", 0) < 0:
        problems.append("reentry noise and damping must be >= 0")
    return problems


def _build(tree, problems):
    """Model objects from a normalised tree; model-level violations are collected."""
    e, p, g, t, v, f = (tree[k] for k in ("experiment", "particle", "grating", "trap",
                                          "environment", "flight"))
    objs = {}

    def attempt(name, fn):
        try:
            objs[name] = fn()
        except KeyError:
            pass  # a key with the wrong type, already reported
        except (ModelError, ValueError) as exc:
            problems.append(f"[{name}] {exc}")

    attempt("particle", lambda: ParticleSpec(
        mass=p["mass_amu"] * AMU, density=p["density_kg_m3"],
        radius=p["radius_nm"] * 1e-9 if "radius_nm" in p else None,
        refractive_index=complex(*p["refractive_index"]),
        refractive_index_trap=complex(*p["refractive_index_trap"]),
        absorption_cross_section_trap=p["absorption_cross_section_trap_m2"]))
    if "particle" in objs and "radius_nm" in p:
        pm = objs["particle"]
        implied = pm.density * pm.volume
        if abs(implied - pm.mass) > 1e-9 * pm.mass:
            problems.append("particle: mass_amu, density_kg_m3 and radius_nm are inconsistent; "
                            "give either the radius or the mass")
    attempt("grating", lambda: GratingSpec(
        wavelength=g["wavelength_nm"] * 1e-9, pulse_energy=g["pulse_energy_uJ"] * 1e-6,
        spot_area=g["spot_area_mm2"] * 1e-6, pulse_duration=g["pulse_duration_ns"] * 1e-9))
    attempt("trap", lambda: TrapSpec(
        wavelength=t["wavelength_nm"] * 1e-9, power=t["power_mW"] * 1e-3,
        numerical_aperture=t["numerical_aperture"], frequency=t["frequency_kHz"] * 1e3,
        waist=t["waist_nm"] * 1e-9 if "waist_nm" in t else None))
    attempt("environment", lambda: EnvironmentSpec(
        gas_pressure=v["pressure_mbar"] * 100.0, gas_temperature=v["gas_temperature_K"],
        internal_temperature=v["internal_temperature_K"],
        environment_temperature=v["environment_temperature_K"]))

    def flight():
        temp = f["temperature_mK"] * 1e-3
        if "total_time_ms" in f:
            if "t1_ms" in f or "t2_ms" in f:
                raise ValueError("give either total_time_ms or t1_ms/t2_ms, not both")
            return FlightPlan.from_total_time(f["total_time_ms"] * 1e-3, temperature=temp)
        if "t1_ms" in f and "t2_ms" in f:
            return FlightPlan(t1=f["t1_ms"] * 1e-3, t2=f["t2_ms"] * 1e-3, temperature=temp)
        raise ValueError("flight needs total_time_ms or both t1_ms and t2_ms")

    attempt("flight", flight)
    if problems:
        return None
    setup = Setup(objs["particle"], objs["grating"], objs["trap"], objs["environment"],
                  objs["flight"])
    phi0 = e["phi0_pi"] * math.pi if "phi0_pi" in e else None
    return Experiment(setup=setup, regime=e["regime"], grating_decoherence=e["grating_decoherence"],
                      channel_presets=tuple(e["channels"]),
                      classical_decoherence=e["classical_decoherence"],
                      force_rayleigh=e["force_rayleigh"],
                      infrared_permittivity=complex(*e["infrared_permittivity"]),
                      n_max=e["n_max"], angular_grid=tuple(e["angular_grid"]), phi0=phi0)


def parse_config(tree, overrides=(), seed=None):
    """Validate a raw tree; raises :class:`ConfigError` listing every problem."""
    tree = apply_overrides(tree, overrides)
    if seed is not None:
        tree.setdefault("experiment", {})
        if isinstance(tree["experiment"], dict):
            tree["experiment"]["seed"] = seed
    norm, problems = normalise(tree)
    problems += _sweep_problems(norm)
    experiment = None
    if not any(p.startswith("missing required") for p in problems):
        experiment = _build(norm, problems)
    if problems:
        raise ConfigError(problems)
    return RunConfig(tree=norm, experiment=experiment)


def load_config(source, overrides=(), seed=None):
    return parse_config(read_config(source), overrides, seed)
