"""Admin HTTP API consumed by the operator console and the CLI.

Read endpoints are non-blocking snapshots; job submission returns
immediately and the job runs in a background thread, so clients poll
GET /api/jobs/{id} until it reports done. When SCM_ADMIN_TOKEN is set in
the environment every /api request must carry it.
"""
from __future__ import annotations

import base64
import os
import threading
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import PlainTextResponse, RedirectResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .errors import ScmForgeError
from .scm import AppDescriptor
from .server import ACTIONS, ManagementServer, new_job
from .tree import ManagementTree, TreeNode
from .uri import NodeUri


class JobRequest(BaseModel):
    action: str
    targets: list[str] = Field(min_length=1)
    app_id: str | None = None
    descriptor: dict | None = None
    payload_b64: str | None = None
    uri: str | None = None
    container_hint: str = "deployed"


def _node_json(uri: NodeUri, node: TreeNode, *, recurse: bool) -> dict:
    props = node.properties
    doc: dict = {
        "uri": uri.render(),
        "name": props.name,
        "kind": "interior" if node.children is not None else "leaf",
        "permanence": node.permanence,
        "properties": {
            "format": props.format,
            "type": props.type,
            "title": props.title,
            "verno": props.verno,
            "tstamp": props.tstamp,
            "size": props.size,
        },
        "acl": props.acl.to_string() or None,
    }
    if node.children is None:
        value = node.value or b""
        if props.format == "bin":
            doc["value_b64"] = base64.b64encode(value).decode("ascii")
        else:
            doc["value"] = value.decode("utf-8")
        doc["children"] = None
    elif recurse:
        doc["children"] = [
            _node_json(uri.child(name), node.children[name], recurse=True)
            for name in sorted(node.children)
        ]
    else:
        doc["children"] = sorted(node.children)
    return doc


def tree_json(tree: ManagementTree, uri: NodeUri | None = None) -> dict:
    if uri is None:
        return {"device_id": tree.device_id,
                "tree": _node_json(NodeUri(), tree.root, recurse=True)}
    node = tree.find(uri)
    if node is None:
        raise KeyError(uri.render())
    return _node_json(uri, node, recurse=False)


def create_app(server: ManagementServer, console_dir: Path | str | None = None) -> FastAPI:
    app = FastAPI(title="scm-forge admin API", docs_url=None, redoc_url=None)

    @app.middleware("http")
    async def check_token(request: Request, call_next):
        token = os.environ.get("SCM_ADMIN_TOKEN")
        if token and request.url.path.startswith("/api"):
            supplied = request.headers.get("x-admin-token")
            auth = request.headers.get("authorization", "")
            if auth.startswith("Bearer "):
                supplied = supplied or auth[len("Bearer "):]
            if supplied != token:
                return PlainTextResponse("admin token required", status_code=401)
        return await call_next(request)

    @app.get("/api/devices")
    def list_devices() -> list[dict]:
        return [record.to_json() for record in server.list_devices()]

    def _device(device_id: str):
        if device_id not in server.registry:
            raise HTTPException(status_code=404, detail=f"unknown device {device_id!r}")
        return server.fleet.device(device_id)

    @app.get("/api/devices/{device_id}/tree")
    def device_tree(device_id: str, uri: str | None = None) -> dict:
        device = _device(device_id)
        try:
            parsed = NodeUri.parse(uri) if uri is not None else None
            with device.lock:
                return tree_json(device.tree, parsed)
        except (ScmForgeError, KeyError) as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from None

    @app.get("/api/devices/{device_id}/inventory")
    def device_inventory(device_id: str) -> dict:
        device = _device(device_id)
        record = server.registry[device_id]
        with device.lock:
            rows = [row.to_json() for row in device.agent.inventory()]
        return {"device_id": device_id, "session_id": record.last_session, "rows": rows}

    @app.post("/api/jobs")
    def submit_job(body: JobRequest) -> dict:
        if body.action not in ACTIONS:
            raise HTTPException(status_code=400, detail=f"unknown action {body.action!r}")
        try:
            descriptor = AppDescriptor.from_json(body.descriptor) if body.descriptor else None
            payload = base64.b64decode(body.payload_b64) if body.payload_b64 else None
            job = new_job(body.action, body.targets, app_id=body.app_id,
                          descriptor=descriptor, payload=payload, node_uri=body.uri,
                          container_hint=body.container_hint)
        except ScmForgeError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        server.submit_job(job)
        threading.Thread(target=server.run_job, args=(job,), daemon=True).start()
        return {"job_id": job.job_id}

    @app.get("/api/jobs/{job_id}")
    def job_status(job_id: str) -> dict:
        job = server.jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}")
        return job.to_json()

    @app.get("/api/sessions/{session_id}/transcript")
    def session_transcript(session_id: str) -> PlainTextResponse:
        transcript = server.transcripts.get(session_id)
        if transcript is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")
        return PlainTextResponse(transcript.to_json_lines(),
                                 media_type="application/x-ndjson")

    console = Path(console_dir) if console_dir else None
    if console is not None and console.is_dir():
        app.mount("/console", StaticFiles(directory=console, html=True), name="console")

        @app.get("/")
        def index() -> RedirectResponse:
            return RedirectResponse(url="/console/")
    else:
        @app.get("/")
        def index() -> dict:
            return {"service": "scm-forge", "api": "/api/devices"}

    return app
