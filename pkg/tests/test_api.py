"""HTTP surface tests."""

import pytest
from fastapi.testclient import TestClient

from app import __version__
from app.main import app
from app.models.schemas import AuditCheck, AuditReport
from app.services.solver_service import SolverService


@pytest.fixture
def client():
    return TestClient(app)


def _run_body(**overrides):
    config = {
        "variant": "cgvamp",
        "operator": {"kind": "fijl", "n": 512, "m": 256, "kappa": 10, "seed": 1},
        "snr_db": 30,
        "t_max": 2,
        "seed": 0,
    }
    config.update(overrides)
    return {"config": config}


def test_root(client):
    response = client.get("/")
    assert response.status_code == 200
    body = response.json()
    assert body["name"] == "cgvamp-lab"
    assert body["version"] == __version__


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "healthy"
    assert body["operator_kind"] in ("dense", "fijl")


def test_run(client):
    response = client.post("/api/run", json=_run_body())
    assert response.status_code == 200
    body = response.json()
    assert [row["t"] for row in body["rows"]] == [0, 1]
    assert body["error"] is None
    assert body["final_nmse_db"] == body["rows"][-1]["nmse_db"]


def test_run_is_reproducible(client):
    first = client.post("/api/run", json=_run_body()).json()
    second = client.post("/api/run", json=_run_body()).json()
    assert first["config_hash"] == second["config_hash"]
    assert [r["nmse"] for r in first["rows"]] == [r["nmse"] for r in second["rows"]]


def test_run_rejects_wide_operator(client):
    body = _run_body(operator={"kind": "fijl", "n": 256, "m": 512})
    assert client.post("/api/run", json=body).status_code == 422


def test_run_rejects_both_policies(client):
    body = _run_body(acg={"c": 0.9}, fixed_iterations=3)
    assert client.post("/api/run", json=body).status_code == 422


def test_run_rejects_oversized_dense_operator(client):
    body = _run_body(operator={"kind": "dense", "n": 16384, "m": 8192, "kappa": 10})
    assert client.post("/api/run", json=body).status_code == 422


def test_audit(client, monkeypatch):
    report = AuditReport(
        n=256,
        seeds=[0],
        checks=[AuditCheck(name="zeta_identity", value=1e-14, threshold=1e-10, passed=True)],
    )
    seen = {}

    def fake_audit(self, n=None, seeds=None):
        seen.update(n=n, seeds=seeds)
        return report

    monkeypatch.setattr(SolverService, "audit", fake_audit)
    response = client.post("/api/audit", json={"n": 256, "seeds": [0]})
    assert response.status_code == 200
    assert response.json()["checks"][0]["name"] == "zeta_identity"
    assert seen == {"n": 256, "seeds": [0]}
