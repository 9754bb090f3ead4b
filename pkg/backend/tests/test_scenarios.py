import json

import numpy as np
import pandas as pd
import pytest

from app.core.errors import ConfigError
from app.schemas.scenario import ScenarioConfig
from app.services import export_service
from app.services.scenario_service import build_runtime, load_runtime, parse_scenario
from app.workflows.verification_workflow import HypothesisAgent

from tests.conftest import SCENARIO_DIR


@pytest.mark.parametrize("name", ["pendulum_orbit", "pendulum_survivor", "magnetic_lift", "ellipsoid_precession"])
def test_bundled_scenarios_validate(scenario_json, name):
    config = parse_scenario(scenario_json(name), name)
    assert config.name == name
    assert config.schema_version == 1


def test_pendulum_runtime_applies_friction_factor(pendulum_scenario):
    runtime = build_runtime(pendulum_scenario)
    assert runtime.friction_threshold == pytest.approx(1.1, rel=1e-9)
    assert runtime.system.params.mu == pytest.approx(1.2 * 1.1, rel=1e-9)
    assert runtime.energy_cap == 0.5
    header = runtime.header()
    assert header["scenario"]["schema"] == 1
    assert header["derived"]["mu"] == pytest.approx(1.32)


def test_surface_runtime_computes_energy_cap(scenario_json):
    config = parse_scenario(scenario_json("ellipsoid_precession"))
    runtime = build_runtime(config)
    assert runtime.energy is not None
    assert runtime.energy_cap == runtime.energy.energy_cap
    assert runtime.system.kind == "rotating_surface"


def test_precessing_ellipsoid_certifies_its_rotation_bound(scenario_json):
    runtime = build_runtime(parse_scenario(scenario_json("ellipsoid_precession")))
    assert runtime.config.verification.certify_rotation
    state = HypothesisAgent().check({
        "runtime": runtime, "resolution": 8, "reports": [], "classification": None,
        "topology": None, "errors": [], "processing_stage": "initialized",
    })
    assert state["errors"] == []
    report = next(r for r in state["reports"] if r.name == "rotation_bound")
    assert report.satisfied
    assert report.details["certified_b"] > report.details["sup_omega"]
    assert report.details["certified_b"] > report.details["sup_omega_dot"]
    assert report.details["sup_omega"] == pytest.approx(2.0 * np.sin(0.025), rel=1e-9)


def test_invalid_json_reports_line_and_column():
    with pytest.raises(ConfigError) as info:
        parse_scenario('{\n  "system": "pendulum",\n  "period": ,\n}', "broken.json")
    assert info.value.message.startswith("broken.json:3:")
    assert info.value.exit_code == 2


def test_schema_error_reports_offending_line():
    text = '{\n  "system": "pendulum",\n  "energy_cap": 0.5,\n  "params": {\n    "m": -1\n  }\n}'
    with pytest.raises(ConfigError) as info:
        parse_scenario(text, "bad.json")
    assert "bad.json:5: params.m" in info.value.message


def test_vertical_force_rejected_in_config():
    raw = {"system": "pendulum", "energy_cap": 0.5, "forcing": {"F": {"constant": [0.0, 0.0, 1.0]}}}
    with pytest.raises(ConfigError, match="F must be horizontal"):
        parse_scenario(json.dumps(raw))


def test_system_specific_rules():
    with pytest.raises(ValueError, match="energy_cap"):
        ScenarioConfig(system="pendulum")
    with pytest.raises(ValueError, match="mu_factor"):
        ScenarioConfig(system="rotating_surface", params={"mu": 1.0, "mu_factor": 1.2})
    with pytest.raises(ValueError, match="driven by its rotation"):
        ScenarioConfig(system="rotating_surface", forcing={"B": {"constant": [0.0, 0.0, 1.0]}})


def test_missing_scenario_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read scenario"):
        load_runtime(tmp_path / "missing.json")


def test_table_round_trip_keeps_header_and_precision(tmp_path):
    frame = pd.DataFrame({"t": [0.0, 0.1], "f": [1.0 / 3.0, np.pi]})
    path = export_service.write_table(frame, tmp_path / "run.csv", {"scenario": {"name": "x"}, "tau": 1.0})
    assert export_service.read_header(path) == {"scenario": {"name": "x"}, "tau": 1.0}
    back = export_service.read_table(path)
    assert back["f"].tolist() == frame["f"].tolist()


def test_identical_runs_write_identical_files(tmp_path, pendulum_scenario):
    header = build_runtime(pendulum_scenario).header()
    frame = pd.DataFrame({"x": np.linspace(0.0, 1.0, 7)})
    a = export_service.write_table(frame, tmp_path / "a.csv", header)
    b = export_service.write_table(frame, tmp_path / "b.csv", header)
    assert a.read_bytes() == b.read_bytes()


def test_scenario_dir_is_bundled():
    assert (SCENARIO_DIR / "pendulum_orbit.json").is_file()
