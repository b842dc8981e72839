"""Batch command line: ``throwcatch <command> --config C --out DIR``.

Every run writes its data files, one SVG per figure-equivalent and finally
``manifest.json`` listing each file with its checksum. A failing run removes
whatever it had written.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import warnings
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import COMMANDS, ConfigError, load_config
from .model import FlightPlan, ParticleSpec
from .output import emit_svg, sha256, write_csv, write_json
from .recapture import (OscillatorParams, fit_reentry, potential_barrier, recapture_report,
                        reentry_trials, required_power, synthesize_reentry_trace)
from .special import NumericalError
from .stochastic import EnsembleSpec, kick_error_ensemble, mass_spread_ensemble
from .talbot import default_grid, spectrum_visibility

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3
THREADS_ENV = "THROWCATCH_THREADS"


@dataclass
class RunManifest:
    command: str
    config_hash: str
    tool_version: str
    seed: int
    timestamp: str
    files: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def as_dict(self):
        return asdict(self)


def config_hash(tree):
    text = json.dumps(tree, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _timestamp():
    # SOURCE_DATE_EPOCH pins the timestamp for reproducible manifests
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    now = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return now.replace(microsecond=0).isoformat()


class _Outputs:
    """Tracks emitted files so a failed run can remove them."""

    def __init__(self, root: Path):
        self.root = root
        self.paths = []
        self.notes = []

    def add(self, path):
        path = Path(path)
        if path not in self.paths:
            self.paths.append(path)
        return path

    def csv(self, name, columns, header):
        return self.add(write_csv(self.root / name, columns, header))

    def json(self, name, data):
        return self.add(write_json(self.root / name, data))

    def svg(self, name, series, labels, **kw):
        return self.add(emit_svg(self.root / name, series, labels, **kw))

    def note(self, *messages):
        for m in messages:
            if m and m not in self.notes:
                self.notes.append(str(m))

    def cleanup(self):
        for p in self.paths:
            p.unlink(missing_ok=True)
        self.paths.clear()


# --------------------------------------------------------------------------
# commands

def _grid(cfg, period):
    g = cfg.section("grid")
    return default_grid(period, g["periods"], g["points_per_period"])


def _method(cfg):
    return cfg.section("experiment")["visibility"]


def cmd_pattern(cfg, out: _Outputs, workers):
    ex = cfg.experiment.resolved()
    grid = _grid(cfg, ex.setup.fringe_period)
    series, labels, rows = [], [], []
    for mode in cfg.modes:
        pat = ex.pattern(mode, grid)
        for p in pat.write(out.root / f"pattern_{mode}"):
            out.add(p)
        out.note(*pat.metadata.get("warnings", ()))
        vm = spectrum_visibility(pat.spectrum, "max_min_central_period")
        vh = spectrum_visibility(pat.spectrum, "harmonic_fit")
        rows.append((mode, vm.visibility, vh.visibility))
        series.append((pat.x * 1e9, pat.w * pat.period))
        labels.append(mode)
    out.csv("visibility.csv", list(zip(*rows)),
            ["mode [-]", "visibility_max_min [-]", "visibility_harmonic [-]"])
    out.svg("pattern.svg", series, labels, title="Fringe pattern", xlabel="x [nm]",
            ylabel="w(x) D [-]")


def cmd_sweep_phi(cfg, out: _Outputs, workers):
    s = cfg.section("sweep_phi")
    phis = np.linspace(s["start_pi"], s["stop_pi"], s["points"]) * math.pi
    method = _method(cfg)
    cols, series = [phis], []
    for mode in cfg.modes:
        vis = []
        for phi in phis:
            sp = cfg.experiment.replace(phi0=float(phi)).spectrum(mode)
            vis.append(spectrum_visibility(sp, method).visibility)
        cols.append(np.array(vis))
        series.append((phis / math.pi, np.array(vis)))
    out.csv("sweep_phi.csv", cols, ["phi0 [rad]"] + [f"visibility_{m} [-]" for m in cfg.modes])
    out.svg("sweep_phi.svg", series, list(cfg.modes), title="Visibility against phase modulation",
            xlabel="phi0 / pi [-]", ylabel="visibility [-]")


def cmd_sweep_time(cfg, out: _Outputs, workers):
    s = cfg.section("sweep_time")
    times = np.linspace(s["start_ms"], s["stop_ms"], s["points"]) * 1e-3
    base = cfg.experiment.resolved()
    temp = base.setup.flight.temperature
    method = _method(cfg)
    cols, series = [times], []
    for mode in cfg.modes:
        physics = base.inputs(mode)[0]
        vis = []
        for t in times:
            ex = base.with_setup(flight=FlightPlan.from_total_time(float(t), temperature=temp))
            vis.append(spectrum_visibility(ex.spectrum(mode, physics), method).visibility)
        cols.append(np.array(vis))
        series.append((times * 1e3, np.array(vis)))
    out.csv("sweep_time.csv", cols, ["total_time [s]"] + [f"visibility_{m} [-]" for m in cfg.modes])
    out.svg("sweep_time.svg", series, list(cfg.modes), title="Visibility against flight time",
            xlabel="flight time [ms]", ylabel="visibility [-]")


def _ensemble_command(cfg, out, workers, name, parameter, runner):
    s = cfg.section(name)
    sigmas = s["relative_sigmas"]
    method = _method(cfg)
    grid = None
    cols = [np.array(sigmas)]
    header = ["relative_sigma [-]"]
    table_series = []
    for mode in cfg.modes:
        v_main, v_harm, v_mean, v_sd = [], [], [], []
        curves, labels = [], []
        for i, sigma in enumerate(sigmas):
            spec = EnsembleSpec(parameter, sigma, s["samples"], cfg.seed, s["truncation_sigmas"])
            if grid is None:
                grid = _grid(cfg, cfg.experiment.resolved().setup.fringe_period)
            ens = runner(cfg.experiment, spec, mode, grid, workers)
            for p in ens.write(out.root / f"{name}_{mode}_{i:02d}"):
                out.add(p)
            out.note(*ens.metadata.get("warnings", ()))
            v_main.append(ens.visibility(method).visibility)
            v_harm.append(ens.visibility("harmonic_fit").visibility)
            v_mean.append(ens.visibility_mean)
            v_sd.append(ens.visibility_sd)
            curves.append((ens.pattern.x * 1e9, ens.pattern.w * ens.pattern.period))
            labels.append(f"{100 * sigma:g}%")
        cols += [np.array(v_main), np.array(v_harm), np.array(v_mean), np.array(v_sd)]
        header += [f"visibility_{mode} [-]", f"visibility_harmonic_{mode} [-]",
                   f"sample_visibility_mean_{mode} [-]", f"sample_visibility_sd_{mode} [-]"]
        table_series.append((100 * np.array(sigmas), np.array(v_main)))
        out.svg(f"{name}_patterns_{mode}.svg", curves, labels,
                title=f"Averaged patterns ({mode})", xlabel="x [nm]", ylabel="w(x) D [-]")
    out.csv(f"{name}_table.csv", cols, header)
    out.svg(f"{name}_table.svg", table_series, list(cfg.modes), title="Visibility against spread",
            xlabel="relative spread [%]", ylabel="visibility [-]")


def cmd_kick_error(cfg, out, workers):
    _ensemble_command(cfg, out, workers, "kick_error", "launch_velocity",
                      lambda ex, spec, mode, grid, w: kick_error_ensemble(ex, spec, mode, grid, w))


def cmd_mass_spread(cfg, out, workers):
    _ensemble_command(cfg, out, workers, "mass_spread", "mass",
                      lambda ex, spec, mode, grid, w: mass_spread_ensemble(ex, spec, mode, grid, w))


def _recapture_particles(cfg):
    p = cfg.experiment.setup.particle
    r = cfg.section("recapture")
    common = dict(density=p.density, refractive_index=p.refractive_index,
                  refractive_index_trap=p.refractive_index_trap,
                  absorption_cross_section_trap=p.absorption_cross_section_trap)
    transverse = ParticleSpec.from_radius(r["transverse_radius_nm"] * 1e-9, **common)
    axial = ParticleSpec(mass=r["axial_mass_kg"], **common)
    return transverse, axial


def cmd_recapture(cfg, out: _Outputs, workers):
    r = cfg.section("recapture")
    trap = cfg.experiment.setup.trap
    transverse, axial = _recapture_particles(cfg)
    rep = recapture_report(r["height_m"], trap, transverse, axial, r.get("return_speed_m_s"),
                           tuple(w * 1e-6 for w in r["window_um"]), r["points"], r["threshold"],
                           r["force_rayleigh"])
    out.note(*rep.warnings)
    out.json("recapture_report.json", rep.as_dict())

    tc = rep.transverse
    v = np.linspace(0.0, 2.0 * tc.v_x_max if tc.feasible else 1e-5, 201)
    ke = 0.5 * transverse.mass * v**2
    barrier = potential_barrier(v * tc.total_time, trap, transverse)
    out.csv("transverse_energy.csv", [v, ke, barrier],
            ["v_x [m/s]", "kinetic_energy [J]", "barrier_at_landing [J]"])
    out.svg("transverse_energy.svg", [(v * 1e6, ke / 1.380649e-23), (v * 1e6, barrier / 1.380649e-23)],
            ["kinetic energy", "barrier"], title="Transverse recapture condition",
            xlabel="v_x [um/s]", ylabel="energy / k_B [K]")

    ax = rep.axial
    out.csv("axial_forces.csv", [ax.z, ax.f_grad, ax.f_scat, ax.f_net],
            ["z [m]", "F_grad [N]", "F_scat [N]", "F_net [N]"])
    out.svg("axial_forces.svg", [(ax.z * 1e6, ax.f_grad * 1e12), (ax.z * 1e6, -ax.f_scat * 1e12),
                                 (ax.z * 1e6, ax.f_net * 1e12)],
            ["gradient", "scattering", "net"], title="Axial forces", xlabel="z [um]",
            ylabel="force along +z [pN]")

    lo, hi = r["speed_range_m_s"]
    speeds = np.linspace(lo, hi, r["speed_points"])
    powers = np.array([required_power(s, ax.power, rep.v_max) for s in speeds])
    out.csv("required_power.csv", [speeds, powers], ["return_speed [m/s]", "power [W]"])
    out.svg("required_power.svg", [(speeds, powers)], ["required power"],
            title="Trap power needed to stop", xlabel="return speed [m/s]", ylabel="power [W]")


def cmd_reentry(cfg, out: _Outputs, workers):
    q = cfg.section("reentry")
    trap = cfg.experiment.setup.trap
    params = OscillatorParams(frequency=trap.frequency, damping_rate=q["damping_rate_per_s"],
                              entry_velocity=q["entry_velocity_m_s"])
    true = q["true_entry_nm"] * 1e-9
    noise = q["noise_asd_nm"] * 1e-9
    fs = q["sample_rate_kHz"] * 1e3
    trace = synthesize_reentry_trace(true, params, noise, q["window_s"], fs, cfg.seed)
    fit = fit_reentry(trace, params.frequency, q["window_s"])
    if not fit.success:
        out.note(f"seed {cfg.seed}: {fit.message}")
    out.csv("reentry_trace.csv", [trace.t, trace.z], ["t [s]", "z [m]"])
    out.json("reentry_fit.json", {**asdict(fit), "true_entry_m": true, "seed": cfg.seed})

    fits = reentry_trials(true, range(cfg.seed, cfg.seed + q["trials"]), params, noise,
                          q["window_s"], fs, workers)
    est = np.array([f.estimate for f in fits])
    ok = np.array([f.success for f in fits])
    failed = int((~ok).sum())
    if failed:
        out.note(f"{failed} of {len(fits)} re-entry fits failed")
    seeds = np.arange(cfg.seed, cfg.seed + q["trials"])
    out.csv("reentry_trials.csv", [seeds, est, ok.astype(int)],
            ["seed [-]", "estimate [m]", "fit_success [-]"])
    good = est[ok]
    out.json("reentry_summary.json", {
        "true_entry_m": true, "trials": len(fits), "failed": failed,
        "mean_m": float(good.mean()) if len(good) else float("nan"),
        "sd_m": float(good.std(ddof=1)) if len(good) > 1 else 0.0,
        "bias_m": float(good.mean() - true) if len(good) else float("nan")})

    n = int(min(len(trace.t), round(10 / params.frequency * fs)))
    t = trace.t[:n]
    a, b = fit.amplitude
    omega = 2 * math.pi * fit.frequency
    model = np.exp(-0.5 * fit.damping_rate * t) * (a * np.cos(omega * t) + b * np.sin(omega * t))
    out.svg("reentry.svg", [(t * 1e6, trace.z[:n] * 1e9), (t * 1e6, model * 1e9)],
            ["measured", "fitted oscillation"], title="Re-entry trace", xlabel="t [us]",
            ylabel="z [nm]")


HANDLERS = {"pattern": cmd_pattern, "sweep-phi": cmd_sweep_phi, "sweep-time": cmd_sweep_time,
            "kick-error": cmd_kick_error, "mass-spread": cmd_mass_spread,
            "recapture": cmd_recapture, "reentry": cmd_reentry}


# --------------------------------------------------------------------------
# orchestration

def run(command, config, out_dir, overrides=(), seed=None, threads=None):
    """Run one command and return its :class:`RunManifest`.

    ``command=None`` takes the command from ``experiment.command``.
    Raises :class:`ConfigError` before any file is written if the
    configuration is invalid.
    """
    cfg = load_config(config, overrides, seed)
    command = command or cfg.command
    if command not in HANDLERS:
        raise ConfigError([f"unknown command {command!r}; choose from {COMMANDS}"])
    workers = default_threads() if threads is None else int(threads)
    if workers < 1:
        raise ConfigError(["threads must be >= 1"])

    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    out = _Outputs(root)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            HANDLERS[command](cfg, out, workers)
        out.note(*(f"{w.category.__name__}: {w.message}" for w in caught))
        manifest = RunManifest(command=command, config_hash=config_hash(cfg.tree),
                               tool_version=__version__, seed=cfg.seed, timestamp=_timestamp(),
                               files=[{"path": p.name, "sha256": sha256(p), "bytes": p.stat().st_size}
                                      for p in out.paths],
                               warnings=list(out.notes), config=cfg.tree)
        write_json(root / "manifest.json", manifest.as_dict())
    except BaseException:
        out.cleanup()
        (root / "manifest.json").unlink(missing_ok=True)
        raise
    return manifest


def default_threads():
    value = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def build_parser():
    parser = argparse.ArgumentParser(prog="throwcatch",
                                     description="Throw-and-catch Talbot-Lau interferometer simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run",) + COMMANDS:
        p = sub.add_parser(name, help="command from [experiment] in the config" if name == "run" else None)
        p.add_argument("--config", required=True,
                       help="TOML file or preset name (table1-1e6, table1-1e8)")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override experiment.seed")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one config value (repeatable)")
        p.add_argument("--threads", type=int, default=None,
                       help=f"worker processes (default: ${THREADS_ENV} or 1)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    command = None if args.command == "run" else args.command
    try:
        manifest = run(command, args.config, args.out, args.set, args.seed, args.threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    for w in manifest.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"{manifest.command}: wrote {len(manifest.files)} files and manifest.json to {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
