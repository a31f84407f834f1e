from __future__ import annotations

import base64
import json
import time

import pytest
from fastapi.testclient import TestClient

from scm_forge.admin_api import create_app
from scm_forge.fleet import descriptor_for, fleet_spawn
from scm_forge.server import ManagementServer, new_job

PAYLOAD = b"MAIL" * 40


@pytest.fixture
def server():
    return ManagementServer(fleet_spawn(3, seed=5))


@pytest.fixture
def client(server):
    return TestClient(create_app(server))


def wait_for_job(client, job_id, timeout=10.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        doc = client.get(f"/api/jobs/{job_id}").json()
        if doc["state"] == "done":
            return doc
        time.sleep(0.02)
    raise AssertionError("job never finished")


def test_device_list(client):
    docs = client.get("/api/devices").json()
    assert [d["device_id"] for d in docs] == ["SIM-0001", "SIM-0002", "SIM-0003"]


def test_tree_full_document(client):
    doc = client.get("/api/devices/SIM-0001/tree").json()
    assert doc["device_id"] == "SIM-0001"
    root = doc["tree"]
    assert root["uri"] == "." and root["kind"] == "interior"
    names = [child["name"] for child in root["children"]]
    assert names == ["DMAcc", "DevDetail", "DevInfo", "SCM"]


def test_tree_lazy_node(client):
    doc = client.get("/api/devices/SIM-0001/tree",
                     params={"uri": "./DevInfo"}).json()
    assert doc["children"] == ["DevId", "DmV", "Lang", "Man", "Mod"]
    leaf = client.get("/api/devices/SIM-0001/tree",
                      params={"uri": "./DevInfo/DevId"}).json()
    assert leaf["value"] == "SIM-0001"
    assert leaf["properties"]["format"] == "chr"


def test_tree_unknown_paths(client):
    assert client.get("/api/devices/SIM-0001/tree",
                      params={"uri": "./Nope"}).status_code == 404
    assert client.get("/api/devices/NOPE/tree").status_code == 404


def test_inventory_endpoint_live(client, server):
    assert client.get("/api/devices/SIM-0001/inventory").json()["rows"] == []
    server.run_job(new_job("deliver", ["SIM-0001"],
                           descriptor=descriptor_for("mail", "Mailer", "1.0", PAYLOAD),
                           payload=PAYLOAD))
    doc = client.get("/api/devices/SIM-0001/inventory").json()
    assert doc["rows"][0]["state"] == "delivered"
    assert doc["session_id"]


def test_job_flow(client):
    body = {
        "action": "deliver",
        "targets": ["SIM-0001", "SIM-0002"],
        "descriptor": descriptor_for("mail", "Mailer", "1.0", PAYLOAD).to_json(),
        "payload_b64": base64.b64encode(PAYLOAD).decode(),
    }
    created = client.post("/api/jobs", json=body)
    assert created.status_code == 200
    job = wait_for_job(client, created.json()["job_id"])
    assert all(st["state"] == "done" and st["code"] == 200
               for st in job["target_status"].values())
    assert job["target_status"]["SIM-0001"]["label"] == "OK"


def test_job_validation(client):
    assert client.post("/api/jobs", json={"action": "explode",
                                          "targets": ["SIM-0001"]}).status_code == 400
    assert client.post("/api/jobs", json={"action": "install",
                                          "targets": []}).status_code == 422
    assert client.get("/api/jobs/nope").status_code == 404


def test_transcript_endpoint(client, server):
    server.run_job(new_job("inventory", ["SIM-0001"]))
    session_id = server.registry["SIM-0001"].last_session
    response = client.get(f"/api/sessions/{session_id}/transcript")
    assert response.status_code == 200
    lines = [json.loads(line) for line in response.text.splitlines() if line.strip()]
    assert lines[0]["direction"] == "client"
    assert lines[0]["commands"] == ["Alert", "Replace", "Final"]
    assert lines[-1]["outcome"] == "ok"
    assert client.get("/api/sessions/unknown/transcript").status_code == 404


def test_admin_token_enforced(server, monkeypatch):
    monkeypatch.setenv("SCM_ADMIN_TOKEN", "sesame")
    client = TestClient(create_app(server))
    assert client.get("/api/devices").status_code == 401
    assert client.get("/api/devices",
                      headers={"X-Admin-Token": "sesame"}).status_code == 200
    assert client.get("/api/devices",
                      headers={"Authorization": "Bearer sesame"}).status_code == 200


def test_console_static_serving(server, tmp_path):
    (tmp_path / "index.html").write_text("<html><body>console</body></html>")
    client = TestClient(create_app(server, console_dir=tmp_path))
    response = client.get("/console/")
    assert response.status_code == 200 and "console" in response.text
    root = client.get("/", follow_redirects=False)
    assert root.status_code == 307 and root.headers["location"] == "/console/"
