import json
import logging

import numpy as np
import pytest

from app import cli
from app.cli import main
from app.services import export_service
from app.services.scenario_service import load_scenario

from tests.conftest import SCENARIO_DIR


def _write(tmp_path, name: str, **changes) -> str:
    config = json.loads((SCENARIO_DIR / f"{name}.json").read_text(encoding="utf-8"))
    for key, value in changes.items():
        config[key] = value
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    return str(path)


def test_simulate_writes_one_sample_per_step(tmp_path):
    out = tmp_path / "out"
    code = main(["simulate", "--config", str(SCENARIO_DIR / "pendulum_orbit.json"), "--t-end", "1", "--output", str(out)])
    assert code == 0
    table = export_service.read_table(out / "pendulum_orbit_trajectory.csv")
    assert len(table) == 2001
    assert table["s_res"].max() <= 1e-9
    header = export_service.read_header(out / "pendulum_orbit_trajectory.csv")
    assert header["derived"]["energy_cap"] == 0.5
    events = json.loads((out / "pendulum_orbit_events.json").read_text())
    assert events["events"] == []


def test_vertical_force_is_a_config_error(tmp_path, caplog):
    path = _write(tmp_path, "pendulum_orbit", forcing={"F": {"constant": [0.0, 0.0, 0.2]}})
    with caplog.at_level(logging.ERROR):
        code = main(["simulate", "--config", path, "--output", str(tmp_path)])
    assert code == 2
    assert "F must be horizontal" in caplog.text


def test_verify_pendulum_block(tmp_path):
    code = main(["verify", "--config", str(SCENARIO_DIR / "pendulum_orbit.json"), "--resolution", "12",
                 "--output", str(tmp_path)])
    assert code == 0
    bundle = json.loads((tmp_path / "pendulum_orbit_verify.json").read_text())
    reports = {r["name"]: r for r in bundle["reports"]}
    assert reports["magnetic_bound"]["margin"] == 1.0
    assert reports["friction_threshold"]["satisfied"]
    assert reports["boundary_classification"]["details"]["total"] >= 10_000
    assert reports["boundary_classification"]["margin"] == 0.0
    assert bundle["topology"]["chi_block"] == 1 and bundle["topology"]["chi_egress"] == 0
    assert (tmp_path / "pendulum_orbit_strata.csv").is_file()


def test_verify_fails_on_magnetic_lift(tmp_path):
    path = _write(tmp_path, "magnetic_lift", params={"m": 1.0, "g": 1.0, "mu": 2.0},
                  forcing={"B": {"constant": [2.0, 0.0, 0.0]}})
    assert main(["verify", "--config", path, "--resolution", "8", "--output", str(tmp_path)]) == 1
    bundle = json.loads((tmp_path / "magnetic_lift_verify.json").read_text())
    assert bundle["all_satisfied"] is False
    magnetic = next(r for r in bundle["reports"] if r["name"] == "magnetic_bound")
    assert magnetic["margin"] == pytest.approx(-1.0)


def test_verify_fails_on_fast_spinning_surface(tmp_path):
    path = _write(tmp_path, "ellipsoid_precession", period=0.2 * np.pi, surface={"type": "sphere"},
                  rotation={"type": "spin", "axis": [1.0, 0.0, 0.0], "rate": 10.0},
                  verification={"resolution": 8, "certify_rotation": True})
    assert main(["verify", "--config", path, "--output", str(tmp_path)]) == 1
    bundle = json.loads((tmp_path / "ellipsoid_precession_verify.json").read_text())
    assert bundle["all_satisfied"] is False
    rotation = next(r for r in bundle["reports"] if r["name"] == "rotation_bound")
    assert not rotation["satisfied"]
    assert rotation["details"]["sup_omega"] == pytest.approx(10.0)


def test_find_orbit_writes_orbit_and_report(tmp_path):
    code = main(["find-orbit", "--config", str(SCENARIO_DIR / "pendulum_orbit.json"), "--output", str(tmp_path)])
    assert code == 0
    report = json.loads((tmp_path / "pendulum_orbit_orbit.json").read_text())
    assert report["status"] == "interior"
    assert report["residual"] <= 1e-8
    assert report["min_f"] > 0 and report["min_c_minus_T"] > 0
    table = export_service.read_table(tmp_path / "pendulum_orbit_orbit.csv")
    assert len(table) >= 2000
    header = export_service.read_header(tmp_path / "pendulum_orbit_orbit.csv")
    assert header["orbit"]["tau"] == 1.0


def test_demo_nonconvex(tmp_path):
    code = main(["demo-nonconvex", "--config", str(SCENARIO_DIR / "magnetic_lift.json"), "--output", str(tmp_path)])
    assert code == 0
    witness = json.loads((tmp_path / "magnetic_lift_witness.json").read_text())
    assert witness["speed"] == pytest.approx(2.0)


def test_sweep_friction_margin_grows(tmp_path):
    code = main(["sweep", "--config", str(SCENARIO_DIR / "pendulum_orbit.json"), "--output", str(tmp_path)])
    assert code == 0
    table = export_service.read_table(tmp_path / "pendulum_orbit_sweep_mu_factor.csv")
    assert len(table) == 7
    assert table["friction_margin"].is_monotonic_increasing
    assert (table["friction_margin"] > 0).tolist() == (table["value"] > 1.0).tolist()


def test_unknown_reproduction(tmp_path):
    assert main(["reproduce", "nothing", "--output", str(tmp_path)]) == 2


def test_reproduce_applies_the_seed_override(tmp_path, monkeypatch):
    seen = []

    def record(config, out):
        seen.append(config.seed)
        return 0

    monkeypatch.setattr(cli, "cmd_demo_nonconvex", record)
    assert main(["reproduce", "magnetic_lift", "--seed", "7", "--output", str(tmp_path)]) == 0
    assert main(["reproduce", "magnetic_lift", "--output", str(tmp_path)]) == 0
    assert seen == [7, load_scenario(SCENARIO_DIR / "magnetic_lift.json").seed]


@pytest.mark.slow
def test_reproduce_pendulum_orbit(tmp_path):
    assert main(["reproduce", "pendulum_orbit", "--output", str(tmp_path)]) == 0
    assert (tmp_path / "pendulum_orbit_verify.json").is_file()
    assert (tmp_path / "pendulum_orbit_orbit.json").is_file()
