import json

import pytest
from fastapi.testclient import TestClient

from main import app

client = TestClient(app)


@pytest.fixture
def scenario_body(scenario_json):
    def load(name: str) -> dict:
        return json.loads(scenario_json(name))
    return load


def test_root_and_health():
    assert client.get("/health").json() == {"status": "healthy"}
    root = client.get("/").json()
    assert "/api/verify" in root["endpoints"]


def test_bundled_scenarios_are_listed():
    names = client.get("/api/scenarios/").json()
    assert {"pendulum_orbit", "magnetic_lift", "ellipsoid_precession"} <= set(names)
    scenario = client.get("/api/scenarios/pendulum_orbit").json()
    assert scenario["system"] == "pendulum"
    assert client.get("/api/scenarios/unknown").status_code == 404


def test_simulate_returns_trajectory(scenario_body):
    response = client.post("/api/simulate/", params={"t_end": 0.1}, json=scenario_body("pendulum_orbit"))
    assert response.status_code == 200
    data = response.json()
    assert data["samples"] == 201
    assert data["max_constraint_residual"] <= 1e-9
    assert len(data["trajectory"]["t"]) == 201


def test_nonconvexity_witness(scenario_body):
    response = client.post("/api/simulate/nonconvexity", json=scenario_body("magnetic_lift"))
    assert response.status_code == 200
    assert response.json()["velocity"] == pytest.approx([0.0, -2.0, 0.0])


def test_missing_witness_is_unprocessable(scenario_body):
    response = client.post("/api/simulate/nonconvexity", json=scenario_body("pendulum_orbit"))
    assert response.status_code == 422
    assert response.json()["detail"]["error"] == "WitnessNotFoundError"


def test_invalid_scenario_rejected(scenario_body):
    body = scenario_body("pendulum_orbit")
    body["forcing"]["F"]["constant"] = [0.0, 0.0, 1.0]
    response = client.post("/api/verify/", json=body)
    assert response.status_code == 422
    assert "F must be horizontal" in response.text


def test_verify_pendulum(scenario_body):
    response = client.post("/api/verify/", params={"resolution": 8}, json=scenario_body("pendulum_orbit"))
    assert response.status_code == 200
    bundle = response.json()
    assert bundle["all_satisfied"] is True
    names = {r["name"] for r in bundle["reports"]}
    assert {"magnetic_bound", "friction_threshold", "tangency_lemma", "boundary_classification", "egress_topology"} <= names
    assert bundle["topology"]["difference"] == 1
