"""scm-forge command line.

`serve` boots the fleet and the admin API; the other subcommands are
thin admin-API clients so an operator can drive deployments and inspect
state from a shell.
"""
from __future__ import annotations

import argparse
import base64
import json
import logging
import os
import sys
import time
import urllib.error
import urllib.request
from pathlib import Path

from . import status
from .fleet import PayloadRepository, fleet_spawn
from .scm import AppDescriptor, sha256_hex
from .server import ACTIONS, ManagementServer

log = logging.getLogger(__name__)

DEFAULT_SERVER = "http://127.0.0.1:8080"


def _parse_listen(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        raise argparse.ArgumentTypeError(f"listen address must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def _api(server_url: str, path: str, payload: dict | None = None) -> dict | list | str:
    url = server_url.rstrip("/") + path
    data = json.dumps(payload).encode() if payload is not None else None
    request = urllib.request.Request(
        url, data=data,
        headers={"Content-Type": "application/json"} if data else {})
    try:
        with urllib.request.urlopen(request, timeout=30) as response:
            body = response.read().decode("utf-8")
    except urllib.error.HTTPError as exc:
        detail = exc.read().decode("utf-8", errors="replace")
        raise SystemExit(f"error: {url} -> {exc.code}: {detail}") from None
    except urllib.error.URLError as exc:
        raise SystemExit(f"error: cannot reach {url}: {exc.reason}") from None
    if response.headers.get_content_type() == "application/json":
        return json.loads(body)
    return body


def _default_console_dir() -> str | None:
    env = os.environ.get("SCM_CONSOLE_DIR")
    if env:
        return env
    for candidate in (Path("frontend/dist"), Path(__file__).parents[2] / "frontend/dist"):
        if candidate.is_dir():
            return str(candidate)
    return None


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .admin_api import create_app

    state_dir = Path(args.state_dir) if args.state_dir else None
    repository = PayloadRepository(root=args.repo_dir)
    if state_dir and (state_dir / "registry.json").exists():
        server = ManagementServer.restore_state(state_dir, repository=repository)
        log.info("restored %d devices from %s", len(server.registry), state_dir)
    else:
        fleet = fleet_spawn(args.fleet, args.seed, repository=repository)
        server = ManagementServer(fleet, transport=args.transport, state_dir=state_dir)
    host, port = args.listen
    app = create_app(server, console_dir=args.console_dir or _default_console_dir())
    print(f"scm-forge serving {len(server.registry)} devices on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")
    if state_dir:
        server.persist_state()
    return 0


def _load_descriptor(args: argparse.Namespace) -> dict | None:
    if args.descriptor:
        doc = json.loads(Path(args.descriptor).read_text())
        if args.payload and "payload_hash" not in doc:
            payload = Path(args.payload).read_bytes()
            doc.setdefault("payload_size", len(payload))
            doc["payload_hash"] = sha256_hex(payload)
        return AppDescriptor.from_json(doc).to_json()
    return None


def cmd_job(args: argparse.Namespace) -> int:
    targets = [t for t in args.targets.split(",") if t]
    if not targets:
        raise SystemExit("error: --targets must name at least one device")
    body: dict = {"action": args.action, "targets": targets,
                  "container_hint": args.container_hint}
    if args.app:
        body["app_id"] = args.app
    if args.uri:
        body["uri"] = args.uri
    descriptor = _load_descriptor(args)
    if descriptor:
        body["descriptor"] = descriptor
    if args.payload:
        body["payload_b64"] = base64.b64encode(Path(args.payload).read_bytes()).decode()

    created = _api(args.server, "/api/jobs", body)
    assert isinstance(created, dict)
    job_id = created["job_id"]
    print(f"job {job_id} submitted")
    while True:
        job = _api(args.server, f"/api/jobs/{job_id}")
        assert isinstance(job, dict)
        if job["state"] == "done":
            break
        time.sleep(args.poll_interval)
    failures = 0
    for target, target_status in sorted(job["target_status"].items()):
        if target_status["state"] == "done":
            code = target_status["code"]
            label = target_status.get("label") or status.LABELS.get(code, "")
            line = f"{target}: {code} {label}"
            if not status.is_success(code):
                failures += 1
        else:
            line = f"{target}: failed ({target_status.get('reason', 'unknown')})"
            failures += 1
        if target_status.get("session_id"):
            line += f"  [session {target_status['session_id']}]"
        print(line)
    return 1 if failures else 0


def cmd_devices(args: argparse.Namespace) -> int:
    devices = _api(args.server, "/api/devices")
    assert isinstance(devices, list)
    if not devices:
        print("no devices registered")
        return 0
    for record in devices:
        devinfo = record.get("cached_devinfo") or {}
        summary = " ".join(f"{key}={devinfo[key]}" for key in sorted(devinfo))
        print(f"{record['device_id']}  {record['address']}"
              f"  last_seen={record.get('last_seen') or '-'}  {summary}")
    return 0


def cmd_transcript(args: argparse.Namespace) -> int:
    text = _api(args.server, f"/api/sessions/{args.session_id}/transcript")
    assert isinstance(text, str)
    for line in text.splitlines():
        if not line.strip():
            continue
        doc = json.loads(line)
        if "outcome" in doc:
            print(f"-- outcome: {doc['outcome']} {doc.get('reason', '')}".rstrip())
        elif args.raw:
            print(base64.b64decode(doc["raw"]).decode("utf-8"))
        else:
            print(f"{doc['direction']:>6} msg={doc['msg_id']} [{doc['phase']}] "
                  + " ".join(doc.get("commands", [])))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scm-forge",
                                     description="software component deployment simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the management server and admin API")
    serve.add_argument("--listen", type=_parse_listen, default=("127.0.0.1", 8080),
                       help="admin API address, host:port")
    serve.add_argument("--state-dir", default=None, help="persist/restore state here")
    serve.add_argument("--fleet", type=int, default=10, help="simulated fleet size")
    serve.add_argument("--seed", type=int, default=1, help="fleet seed")
    serve.add_argument("--transport", choices=("memory", "tcp"), default="memory")
    serve.add_argument("--repo-dir", default=None, help="payload repository directory")
    serve.add_argument("--console-dir", default=None, help="built console bundle")
    serve.set_defaults(func=cmd_serve)

    job = sub.add_parser("job", help="submit a deployment job and await it")
    job.add_argument("action", choices=ACTIONS)
    job.add_argument("--server", default=DEFAULT_SERVER)
    job.add_argument("--targets", required=True, help="comma-separated device ids")
    job.add_argument("--app", default=None, help="application id")
    job.add_argument("--descriptor", default=None, help="descriptor JSON file")
    job.add_argument("--payload", default=None, help="payload file")
    job.add_argument("--uri", default=None, help="node URI for get_node")
    job.add_argument("--container-hint", choices=("deployed", "delivered"),
                     default="deployed")
    job.add_argument("--poll-interval", type=float, default=0.2)
    job.set_defaults(func=cmd_job)

    devices = sub.add_parser("devices", help="list registered devices")
    devices.add_argument("--server", default=DEFAULT_SERVER)
    devices.set_defaults(func=cmd_devices)

    transcript = sub.add_parser("transcript", help="print a session transcript")
    transcript.add_argument("session_id")
    transcript.add_argument("--server", default=DEFAULT_SERVER)
    transcript.add_argument("--raw", action="store_true", help="print raw packages")
    transcript.set_defaults(func=cmd_transcript)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
