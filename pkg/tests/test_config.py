import json
import math

import pytest

from throwcatch.config import (PRESETS, SCHEMA, ConfigError, apply_overrides, load_config,
                               parse_config, read_config)
from throwcatch.model import AMU


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_presets_parse(name):
    cfg = load_config(name)
    s = cfg.experiment.setup
    assert cfg.command == "pattern"
    assert cfg.modes == ("quantum", "classical")
    assert s.environment.gas_pressure == pytest.approx(1e-8)
    assert s.flight.temperature == pytest.approx(1e-3)
    assert s.flight.t1 == s.flight.t2
    assert cfg.experiment.regime == "mie"


def test_preset_values():
    light, heavy = load_config("table1-1e6"), load_config("table1-1e8")
    assert light.experiment.setup.particle.mass == pytest.approx(1e6 * AMU)
    assert light.experiment.phi0 == pytest.approx(math.pi / 2)
    assert light.experiment.setup.flight.total_time == pytest.approx(0.058)
    assert heavy.experiment.phi0 == pytest.approx(8 * math.pi)
    assert heavy.experiment.setup.flight.total_time == pytest.approx(0.142)


def test_unit_conversion(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('[experiment]\ncommand = "pattern"\n[particle]\nmass_amu = 2e7\n'
                 '[grating]\nwavelength_nm = 200.0\npulse_energy_uJ = 2.0\nspot_area_mm2 = 0.5\n'
                 '[trap]\npower_mW = 250.0\nfrequency_kHz = 100.0\n'
                 '[environment]\npressure_mbar = 1e-9\n[flight]\nt1_ms = 10.0\nt2_ms = 20.0\n'
                 'temperature_mK = 0.5\n')
    s = load_config(p).experiment.setup
    assert s.particle.mass == pytest.approx(2e7 * AMU)
    assert s.grating.wavelength == pytest.approx(200e-9)
    assert s.grating.pulse_energy == pytest.approx(2e-6)
    assert s.grating.spot_area == pytest.approx(0.5e-6)
    assert s.trap.power == pytest.approx(0.25) and s.trap.frequency == pytest.approx(1e5)
    assert s.environment.gas_pressure == pytest.approx(1e-7)
    assert (s.flight.t1, s.flight.t2) == pytest.approx((0.01, 0.02))
    assert s.flight.temperature == pytest.approx(5e-4)


def test_overrides():
    cfg = load_config("table1-1e6", ["flight.total_time_ms=70", "experiment.modes=['quantum']",
                                     "experiment.visibility=harmonic_fit"], seed=12)
    assert cfg.experiment.setup.flight.total_time == pytest.approx(0.07)
    assert cfg.modes == ("quantum",)
    assert cfg.tree["experiment"]["visibility"] == "harmonic_fit"
    assert cfg.seed == 12


def test_override_syntax():
    with pytest.raises(ConfigError) as err:
        apply_overrides({}, ["nonsense", "a.b.c=1"])
    assert len(err.value.problems) == 2


def test_every_problem_is_listed():
    tree = read_config("table1-1e6")
    bad = ["particle.mass_amu=-5", "trap.numerical_aperture=1.5", "flight.total_time_ms='x'",
           "experiment.regime=quantum-foam", "bogus.key=1", "grid.periods=1"]
    with pytest.raises(ConfigError) as err:
        parse_config(tree, bad)
    text = "\n".join(err.value.problems)
    for needle in ("mass", "numerical_aperture", "total_time_ms", "regime", "bogus", "grid.periods"):
        assert needle in text
    assert len(err.value.problems) >= 6


def test_missing_required():
    with pytest.raises(ConfigError) as err:
        parse_config({"experiment": {"command": "pattern"}})
    assert any("mass_amu" in p for p in err.value.problems)


@pytest.mark.parametrize("section", ["sweep_phi", "sweep_time"])
def test_empty_sweep(section):
    with pytest.raises(ConfigError) as err:
        load_config("table1-1e8", [f"{section}.points=0"])
    assert any("empty sweep" in p for p in err.value.problems)


def test_flight_given_twice():
    with pytest.raises(ConfigError):
        load_config("table1-1e6", ["flight.t1_ms=10", "flight.t2_ms=10"])


def test_round_trip_through_json():
    cfg = load_config("table1-1e8", ["experiment.channels=['gas', 'blackbody']"])
    echoed = json.loads(json.dumps(cfg.tree))
    again = parse_config(echoed)
    assert again.experiment == cfg.experiment
    assert again.tree == cfg.tree


def test_schema_defaults_are_valid():
    tree = {"experiment": {"command": "pattern"}, "particle": {"mass_amu": 1e6},
            "flight": {"total_time_ms": 50.0}}
    cfg = parse_config(tree)
    assert set(cfg.tree) == set(SCHEMA)


def test_missing_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/config.toml")
