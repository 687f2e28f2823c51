import json
import math

import numpy as np
import pytest
from fastapi.testclient import TestClient

from qetlab import __version__, service
from qetlab.chain import build_model, ground_state
from qetlab.cooling import minimize_residual
from qetlab.errors import NumericalError
from qetlab.serialize import state_from_doc


@pytest.fixture(scope="module")
def client():
    return TestClient(service.app)


def post_config(client, command, **fields):
    doc = {"command": command, **fields}
    return client.post(f"/{command}", json={"config": doc})


def honest_scenario(seed=3):
    return {
        "model": {"n_sites": 14, "h": 1.0, "lambda": 1.0},
        "nodes": [
            {"id": "S", "role": "supplier", "site": 0},
            {"id": "C1", "role": "consumer", "site": -5},
            {"id": "C2", "role": "consumer", "site": 5},
        ],
        "scenario": "honest",
        "seed": seed,
    }


class TestHealth:
    def test_health(self, client):
        response = client.get("/health")
        assert response.status_code == 200
        assert response.json() == {"status": "ok", "version": __version__}


class TestAnalytic:
    def test_json_mode(self, client):
        response = post_config(client, "analytic", **{"lambda": 1.0, "n_max": 6, "distances": [5]})
        assert response.status_code == 200
        body = response.json()
        assert body["version"] == __version__
        assert body["config"]["j"] == 1.0
        assert body["result"]["correlators"]["entries"]["0"] == pytest.approx(
            2 / math.pi, abs=1e-10
        )
        assert "csv" not in body

    def test_csv_mode_attaches_tables(self, client):
        response = post_config(
            client, "analytic", **{"lambda": 1.0, "n_max": 3, "distances": [5], "format": "csv"}
        )
        assert response.status_code == 200
        csv = response.json()["csv"]
        assert csv["correlators"].startswith(f"# qetlab {__version__}\n# config ")
        assert "n,G,Delta,Delta_closed,Delta_asym" in csv["correlators"]
        assert "d,xi,eta,theta,E_B,E_B_asym" in csv["energies"]

    def test_lambda_alias_and_field_name_agree(self, client):
        by_alias = post_config(client, "analytic", **{"lambda": 0.5, "n_max": 2, "distances": [5]})
        by_name = post_config(client, "analytic", lam=0.5, n_max=2, distances=[5])
        assert by_alias.json() == by_name.json()

    def test_out_of_range_lambda(self, client):
        response = post_config(client, "analytic", **{"lambda": 1.5, "n_max": 2})
        assert response.status_code == 400
        body = response.json()
        assert body["kind"] == "config"
        assert "[0, 1]" in body["detail"]


class TestQet:
    def test_gain_identity(self, client):
        response = post_config(client, "qet", n_sites=14, **{"lambda": 1.0}, distance=5)
        assert response.status_code == 200
        report = response.json()["result"]
        entry = report["consumers"][0]
        assert abs(entry["e_m_meas"] - entry["e_m_pred"]) < 1e-9
        assert report["e_s"] == pytest.approx(1.9138723436529665, abs=1e-10)

    def test_capacity_maps_to_400(self, client):
        response = post_config(client, "qet", n_sites=25, distance=5)
        assert response.status_code == 400
        assert "capacity" in response.json()["detail"]

    def test_malformed_body_is_422(self, client):
        response = client.post("/qet", json={"config": {"command": "qet", "n_sites": "many"}})
        assert response.status_code == 422

    def test_unknown_config_field_is_422(self, client):
        response = client.post("/qet", json={"config": {"command": "qet", "n_site": 10}})
        assert response.status_code == 422

    def test_command_endpoint_mismatch(self, client):
        response = client.post("/qed", json={"config": {"command": "qet", "n_sites": 10}})
        assert response.status_code == 400


class TestQed:
    def test_ledger(self, client):
        response = post_config(client, "qed", n_sites=14, consumer_sites=[-5, 5])
        assert response.status_code == 200
        report = response.json()["result"]
        assert [c["site"] for c in report["consumers"]] == [-5, 5]
        assert report["residual_total"] >= 0
        assert report["residual_total"] == pytest.approx(
            report["e_s"] - report["e_c"], abs=1e-9
        )

    def test_placement_maps_to_400(self, client):
        response = post_config(client, "qed", n_sites=14, consumer_sites=[-5, -2])
        assert response.status_code == 400
        assert "labels apart" in response.json()["detail"]

    def test_missing_consumers(self, client):
        response = post_config(client, "qed", n_sites=14)
        assert response.status_code == 400


class TestCooling:
    def test_matches_direct_call(self, client):
        response = post_config(client, "cooling", n_sites=8, **{"lambda": 1.0})
        assert response.status_code == 200
        body = response.json()
        assert body["converged"] is True
        assert "partial" not in body
        direct = minimize_residual(build_model(8, 1.0, 1.0))
        assert body["result"]["e_r"] == direct.e_r

    def test_numerical_error_maps_to_500(self, client, monkeypatch):
        def boom(cfg):
            raise NumericalError("energy ledger off by 1e-3")

        monkeypatch.setattr(service, "run_cooling_job", boom)
        response = post_config(client, "cooling", n_sites=8)
        assert response.status_code == 500
        assert response.json()["kind"] == "numerical"


class TestNetsim:
    def test_session_jsonl(self, client):
        response = client.post("/netsim", json={"scenario": honest_scenario()})
        assert response.status_code == 200
        body = response.json()
        docs = [json.loads(line) for line in body["jsonl"].splitlines()]
        assert docs[0]["event"] == "session_start"
        assert docs[0]["config"]["version"] == __version__
        assert docs[-1]["event"] == "session_end"
        assert body["config"] == docs[0]["config"]

    def test_repeat_is_identical(self, client):
        first = client.post("/netsim", json={"scenario": honest_scenario()})
        second = client.post("/netsim", json={"scenario": honest_scenario()})
        assert first.json()["jsonl"] == second.json()["jsonl"]

    def test_impersonation_rejected_in_transcript(self, client):
        scenario = {
            "model": {"n_sites": 14, "lambda": 1.0},
            "nodes": [
                {"id": "S", "role": "supplier", "site": 0},
                {"id": "C", "role": "consumer", "site": 5},
                {"id": "D", "role": "adversary", "site": -5},
            ],
            "scenario": "impersonate",
            "seed": 1,
        }
        response = client.post("/netsim", json={"scenario": scenario})
        assert response.status_code == 200
        events = [json.loads(line) for line in response.json()["jsonl"].splitlines()]
        fails = [e for e in events if e.get("type") == "AUTH_FAIL"]
        assert len(fails) == 1

    def test_bad_scenario_is_400(self, client):
        response = client.post("/netsim", json={"scenario": {"model": {"n_sites": 14}}})
        assert response.status_code == 400

    def test_unknown_scenario_key_is_400(self, client):
        doc = honest_scenario()
        doc["mode"] = "x"
        response = client.post("/netsim", json={"scenario": doc})
        assert response.status_code == 400


class TestValidate:
    def test_subset(self, client):
        response = client.post("/validate", json={"config": {"command": "validate", "only": "separable"}})
        assert response.status_code == 200
        body = response.json()
        assert body["result"]["passed"] is True
        assert "1/1 criteria passed" in body["text"]

    def test_unknown_only_is_400(self, client):
        response = client.post("/validate", json={"config": {"command": "validate", "only": "zzz"}})
        assert response.status_code == 400

    def test_bad_tolerances_are_400(self, client):
        response = client.post(
            "/validate",
            json={"config": {"command": "validate", "only": "separable",
                             "tolerances": {"separable-limit": {"abs": -1.0}}}},
        )
        assert response.status_code == 400


class TestDumpState:
    def test_ground_state_roundtrip(self, client):
        response = post_config(client, "dump-state", n_sites=6, **{"lambda": 0.5})
        assert response.status_code == 200
        result = response.json()["result"]
        state = state_from_doc(result["state"])
        direct = ground_state(build_model(6, 1.0, 0.5))
        assert np.array_equal(state.branches[0][1], direct.vector)
        assert result["gap"] > 0
        assert result["model"]["lambda"] == 0.5
