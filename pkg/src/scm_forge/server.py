"""Management server: device registry, deployment jobs, persistence.

A deployment job names one action and a target list; it compiles to a
deterministic command batch per target and runs one session per target,
concurrently across targets. Per-target outcomes are recorded from the
Status codes the device returned — the registry caches DevInfo and
inventory results for display but never uses them to validate anything;
the device is authoritative.
"""
from __future__ import annotations

import base64
import json
import logging
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from . import status, tree_xml
from .codec import Add, DmCommand, DmItem, Exec, Get, ItemMeta, Replace
from .errors import DuplicateDevice, ScmForgeError, SchemaViolation, UnknownAction, UnknownDevice
from .fleet import Fleet, PayloadRepository, SimDevice, StepClock, make_device
from .scm import (
    DELIVERED_OPERATIONS,
    ORIGIN_DM_SERVER,
    ORIGIN_DOWNLOAD,
    AppDescriptor,
    InventoryRow,
)
from .session import (
    PlainCredentials,
    ServerSession,
    Transcript,
    run_session,
)
from .transport import TcpListener, link_pair, tcp_link
from .tree import SCM_DELIVERED, SCM_DEPLOYED, SCM_DOWNLOAD, SCM_ROOT
from .uri import NodeUri

log = logging.getLogger(__name__)

ACTIONS = (
    "deliver", "install", "activate", "deactivate", "remove", "update",
    "register_download", "start_download", "inventory", "get_node",
)

INVENTORY_URI = SCM_ROOT.child("Inventory")


def _utcnow() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class DeviceRecord:
    device_id: str
    address: str
    last_seen: str = ""
    last_session: str = ""
    cached_devinfo: dict[str, str] = field(default_factory=dict)
    devinfo_session: str = ""
    cached_inventory: list[dict] | None = None
    inventory_session: str = ""

    def to_json(self) -> dict:
        return {
            "device_id": self.device_id,
            "address": self.address,
            "last_seen": self.last_seen,
            "last_session": self.last_session,
            "cached_devinfo": dict(self.cached_devinfo),
            "devinfo_session": self.devinfo_session,
            "cached_inventory": self.cached_inventory,
            "inventory_session": self.inventory_session,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DeviceRecord":
        return cls(
            device_id=doc["device_id"],
            address=doc.get("address", ""),
            last_seen=doc.get("last_seen", ""),
            last_session=doc.get("last_session", ""),
            cached_devinfo=dict(doc.get("cached_devinfo", {})),
            devinfo_session=doc.get("devinfo_session", ""),
            cached_inventory=doc.get("cached_inventory"),
            inventory_session=doc.get("inventory_session", ""),
        )


@dataclass
class TargetStatus:
    state: str = "pending"  # pending | done | failed
    code: int | None = None
    reason: str = ""
    session_id: str = ""

    def to_json(self) -> dict:
        doc = {"state": self.state, "session_id": self.session_id}
        if self.code is not None:
            doc["code"] = self.code
            doc["label"] = status.LABELS.get(self.code, "")
        if self.reason:
            doc["reason"] = self.reason
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "TargetStatus":
        return cls(state=doc.get("state", "pending"), code=doc.get("code"),
                   reason=doc.get("reason", ""), session_id=doc.get("session_id", ""))


@dataclass
class DeploymentJob:
    job_id: str
    action: str
    targets: list[str]
    app_id: str | None = None
    descriptor: AppDescriptor | None = None
    payload: bytes | None = None
    node_uri: str | None = None
    container_hint: str = "deployed"  # where remove/update expect the app
    state: str = "pending"  # pending | running | done
    created: str = field(default_factory=_utcnow)
    finished: str = ""
    target_status: dict[str, TargetStatus] = field(default_factory=dict)

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise UnknownAction(f"unknown job action {self.action!r}")
        if self.container_hint not in ("deployed", "delivered"):
            raise SchemaViolation(f"bad container hint {self.container_hint!r}")
        for target in self.targets:
            self.target_status.setdefault(target, TargetStatus())

    @property
    def terminal(self) -> bool:
        return self.state == "done"

    def to_json(self) -> dict:
        return {
            "job_id": self.job_id,
            "action": self.action,
            "targets": list(self.targets),
            "app_id": self.app_id,
            "descriptor": self.descriptor.to_json() if self.descriptor else None,
            "payload_b64": base64.b64encode(self.payload).decode() if self.payload else None,
            "node_uri": self.node_uri,
            "container_hint": self.container_hint,
            "state": self.state,
            "created": self.created,
            "finished": self.finished,
            "target_status": {t: s.to_json() for t, s in self.target_status.items()},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "DeploymentJob":
        descriptor = doc.get("descriptor")
        payload = doc.get("payload_b64")
        job = cls(
            job_id=doc["job_id"],
            action=doc["action"],
            targets=list(doc.get("targets", [])),
            app_id=doc.get("app_id"),
            descriptor=AppDescriptor.from_json(descriptor) if descriptor else None,
            payload=base64.b64decode(payload) if payload else None,
            node_uri=doc.get("node_uri"),
            container_hint=doc.get("container_hint", "deployed"),
            state=doc.get("state", "pending"),
            created=doc.get("created", ""),
            finished=doc.get("finished", ""),
        )
        for target, st in doc.get("target_status", {}).items():
            job.target_status[target] = TargetStatus.from_json(st)
        return job


def new_job(action: str, targets: list[str], **kwargs) -> DeploymentJob:
    return DeploymentJob(job_id=f"job-{uuid.uuid4().hex[:12]}", action=action,
                         targets=targets, **kwargs)


# --- job compilation ---------------------------------------------------------


def _leaf_add(uri: NodeUri, value: bytes, fmt: str = "chr",
              mime: str = "text/plain") -> Add:
    return Add(cmd_id=0, items=(DmItem(
        target_uri=uri, meta=ItemMeta(format=fmt, type=mime, size=len(value)),
        data=value),))


def _interior_add(uri: NodeUri) -> Add:
    return Add(cmd_id=0, items=(DmItem(target_uri=uri, meta=ItemMeta(format="node")),))


def _app_subtree_adds(base: NodeUri, descriptor: AppDescriptor, origin: str,
                      payload: bytes | None, operations: tuple[str, ...]) -> list[DmCommand]:
    app = base.child(descriptor.app_id)
    cmds: list[DmCommand] = [_interior_add(app)]
    cmds.append(_leaf_add(app.child("ID"), descriptor.app_id.encode()))
    cmds.append(_leaf_add(app.child("Name"), descriptor.name.encode()))
    cmds.append(_leaf_add(app.child("Version"), descriptor.version.encode()))
    cmds.append(_leaf_add(app.child("Vendor"), descriptor.vendor.encode()))
    cmds.append(_leaf_add(app.child("Type"), descriptor.payload_type.encode()))
    cmds.append(_leaf_add(app.child("Size"), str(descriptor.payload_size).encode(), fmt="int"))
    cmds.append(_leaf_add(app.child("Hash"), descriptor.payload_hash.encode()))
    cmds.append(_leaf_add(app.child("Origin"), origin.encode()))
    if descriptor.source_uri is not None:
        cmds.append(_leaf_add(app.child("SourceURI"), descriptor.source_uri.encode()))
    if payload is not None:
        cmds.append(_leaf_add(app.child("Data"), payload, fmt="bin",
                              mime=descriptor.payload_type))
    ops = app.child("Operations")
    cmds.append(_interior_add(ops))
    for op in operations:
        cmds.append(_leaf_add(ops.child(op), b""))
    return cmds


def _exec_on(uri: NodeUri) -> Exec:
    return Exec(cmd_id=0, item=DmItem(target_uri=uri))


def compile_job(job: DeploymentJob, target: str) -> list[DmCommand]:
    """Pure mapping from a job action to the command batch for one target."""
    del target  # batches are identical across targets; the signature documents intent
    action = job.action
    app_id = job.app_id
    if action == "deliver":
        if job.descriptor is None or job.payload is None:
            raise SchemaViolation("deliver needs descriptor and payload")
        return _app_subtree_adds(SCM_DELIVERED, job.descriptor, ORIGIN_DM_SERVER,
                                 job.payload, DELIVERED_OPERATIONS)
    if action == "register_download":
        if job.descriptor is None:
            raise SchemaViolation("register_download needs a descriptor")
        if job.descriptor.source_uri is None:
            raise SchemaViolation("register_download needs a source URI")
        return _app_subtree_adds(SCM_DOWNLOAD, job.descriptor, ORIGIN_DOWNLOAD,
                                 None, ("Start",))
    if action in ("install", "activate", "deactivate", "remove", "start_download"):
        if not app_id:
            raise SchemaViolation(f"{action} needs an app_id")
        containers = {
            "install": SCM_DELIVERED,
            "activate": SCM_DEPLOYED,
            "deactivate": SCM_DEPLOYED,
            "start_download": SCM_DOWNLOAD,
            "remove": SCM_DELIVERED if job.container_hint == "delivered" else SCM_DEPLOYED,
        }
        op_names = {"install": "Install", "activate": "Activate",
                    "deactivate": "Deactivate", "remove": "Remove",
                    "start_download": "Start"}
        base = containers[action].child(app_id).child("Operations")
        return [_exec_on(base.child(op_names[action]))]
    if action == "update":
        if job.descriptor is None or job.payload is None or not app_id:
            raise SchemaViolation("update needs app_id, descriptor and payload")
        base = (SCM_DELIVERED if job.container_hint == "delivered"
                else SCM_DEPLOYED).child(app_id)
        d = job.descriptor

        def rep(leaf: str, value: bytes, fmt: str = "chr",
                mime: str = "text/plain") -> Replace:
            return Replace(cmd_id=0, items=(DmItem(
                target_uri=base.child(leaf),
                meta=ItemMeta(format=fmt, type=mime, size=len(value)), data=value),))

        return [
            rep("Name", d.name.encode()),
            rep("Version", d.version.encode()),
            rep("Vendor", d.vendor.encode()),
            rep("Type", d.payload_type.encode()),
            rep("Size", str(d.payload_size).encode(), fmt="int"),
            rep("Hash", d.payload_hash.encode()),
            rep("Data", job.payload, fmt="bin", mime=d.payload_type),
        ]
    if action == "inventory":
        return [Get(cmd_id=0, items=(DmItem(target_uri=INVENTORY_URI),)),
                Get(cmd_id=0, items=(DmItem(target_uri=SCM_DOWNLOAD),))]
    if action == "get_node":
        if not job.node_uri:
            raise SchemaViolation("get_node needs a URI")
        return [Get(cmd_id=0, items=(DmItem(target_uri=NodeUri.parse(job.node_uri)),))]
    raise UnknownAction(f"unknown job action {action!r}")


class InventoryWalkPlanner:
    """Walks the SCM subtree with follow-up Get batches, one level per
    iteration, then classifies every application from the fetched leaves."""

    def __init__(self):
        self.stage = "containers"
        self.delivered: list[str] = []
        self.deployed: list[str] = []
        self.downloads: list[str] = []
        self.rows: list[InventoryRow] | None = None

    @staticmethod
    def _children(sess: ServerSession, uri: NodeUri) -> list[str]:
        items = sess.result_items(uri.render())
        if not items:
            return []
        text = (items[0].data or b"").decode("utf-8")
        return [name for name in text.split("/") if name]

    @staticmethod
    def _leaf(sess: ServerSession, uri: NodeUri) -> str:
        items = sess.result_items(uri.render())
        if not items:
            return ""
        return (items[0].data or b"").decode("utf-8")

    def next_batch(self, sess: ServerSession) -> list[DmCommand] | None:
        if self.stage == "containers":
            self.stage = "listing"
            self.downloads = self._children(sess, SCM_DOWNLOAD)
            containers = self._children(sess, INVENTORY_URI)
            return [Get(cmd_id=0, items=(DmItem(target_uri=INVENTORY_URI.child(name)),))
                    for name in containers] or self._finish(sess)
        if self.stage == "listing":
            self.stage = "leaves"
            self.delivered = self._children(sess, SCM_DELIVERED)
            self.deployed = self._children(sess, SCM_DEPLOYED)
            batch: list[DmCommand] = []

            def want(uri: NodeUri) -> None:
                batch.append(Get(cmd_id=0, items=(DmItem(target_uri=uri),)))

            for app_id in self.downloads:
                base = SCM_DOWNLOAD.child(app_id)
                for leaf in ("Name", "Version", "Origin"):
                    want(base.child(leaf))
            for app_id in self.delivered:
                base = SCM_DELIVERED.child(app_id)
                for leaf in ("Name", "Version", "Origin"):
                    want(base.child(leaf))
            for app_id in self.deployed:
                base = SCM_DEPLOYED.child(app_id)
                for leaf in ("Name", "Version", "Origin", "State"):
                    want(base.child(leaf))
            if not batch:
                return self._finish(sess)
            return batch
        if self.stage == "leaves":
            return self._finish(sess)
        return None

    def _finish(self, sess: ServerSession) -> None:
        rows = []
        for app_id in self.downloads:
            base = SCM_DOWNLOAD.child(app_id)
            rows.append(InventoryRow(
                app_id=app_id, name=self._leaf(sess, base.child("Name")),
                version=self._leaf(sess, base.child("Version")),
                state="downloadable", origin=self._leaf(sess, base.child("Origin"))))
        for app_id in self.delivered:
            base = SCM_DELIVERED.child(app_id)
            rows.append(InventoryRow(
                app_id=app_id, name=self._leaf(sess, base.child("Name")),
                version=self._leaf(sess, base.child("Version")),
                state="delivered", origin=self._leaf(sess, base.child("Origin"))))
        for app_id in self.deployed:
            base = SCM_DEPLOYED.child(app_id)
            rows.append(InventoryRow(
                app_id=app_id, name=self._leaf(sess, base.child("Name")),
                version=self._leaf(sess, base.child("Version")),
                state=self._leaf(sess, base.child("State")),
                origin=self._leaf(sess, base.child("Origin"))))
        self.rows = sorted(rows, key=lambda row: row.app_id)
        self.stage = "done"
        return None


# --- the server -------------------------------------------------------------------


class ManagementServer:
    """Owns the registry, job history, transcripts, and session orchestration."""

    def __init__(self, fleet: Fleet | None = None, *, server_id: str = "dm-server",
                 transport: str = "memory", state_dir: Path | str | None = None,
                 deadline_ms: int | None = None):
        if transport not in ("memory", "tcp"):
            raise SchemaViolation(f"unknown transport {transport!r}")
        self.server_id = server_id
        self.transport = transport
        self.state_dir = Path(state_dir) if state_dir else None
        self.deadline_ms = deadline_ms
        self.fleet = fleet or Fleet(devices={}, repository=PayloadRepository())
        self.registry: dict[str, DeviceRecord] = {}
        self.jobs: dict[str, DeploymentJob] = {}
        self.transcripts: dict[str, Transcript] = {}
        self._lock = threading.RLock()
        self._passwords: dict[str, str] = {}
        for device in self.fleet.devices.values():
            self._register_sim_device(device)

    # -- registry ---------------------------------------------------------------

    def _register_sim_device(self, device: SimDevice) -> None:
        record = DeviceRecord(device_id=device.device_id,
                              address=f"{self.transport}://{device.device_id}")
        self._passwords[device.credentials.username] = device.credentials.password
        self.registry[device.device_id] = record

    def register_device(self, device: SimDevice) -> DeviceRecord:
        with self._lock:
            if device.device_id in self.registry:
                raise DuplicateDevice(device.device_id)
            self.fleet.add_device(device)
            self._register_sim_device(device)
            return self.registry[device.device_id]

    def list_devices(self) -> list[DeviceRecord]:
        with self._lock:
            return [self.registry[key] for key in sorted(self.registry)]

    def password_for(self, username: str) -> str | None:
        return self._passwords.get(username)

    # -- jobs ------------------------------------------------------------------

    def submit_job(self, job: DeploymentJob) -> DeploymentJob:
        with self._lock:
            self.jobs[job.job_id] = job
        return job

    def run_job(self, job: DeploymentJob) -> DeploymentJob:
        """Run one session per target; failures are recorded, never raised."""
        self.submit_job(job)
        job.state = "running"
        workers = max(1, len(job.targets))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for target in job.targets:
                pool.submit(self._run_target, job, target)
        job.state = "done"
        job.finished = _utcnow()
        self._persist_jobs()
        return job

    def _run_target(self, job: DeploymentJob, target: str) -> None:
        target_status = job.target_status[target]
        try:
            with self._lock:
                if target not in self.registry:
                    raise UnknownDevice(target)
                device = self.fleet.device(target)
            batch = compile_job(job, target)
            planner = InventoryWalkPlanner() if job.action == "inventory" else None
            sess = ServerSession(server_id=self.server_id, passwords=self.password_for,
                                 queue=[batch], planner=planner, device_id=target)
            transcript = self._drive_session(sess, device)
            self._record_session(job, target, sess, planner, transcript)
        except ScmForgeError as exc:
            target_status.state = "failed"
            target_status.reason = f"{type(exc).__name__}: {exc}"
            log.warning("job %s target %s failed: %s", job.job_id, target, exc)

    def _drive_session(self, sess: ServerSession, device: SimDevice) -> Transcript:
        with device.lock:
            if self.transport == "tcp":
                listener = TcpListener()
                device.link = tcp_link(listener.address, self.deadline_ms)
                server_link = listener.accept(self.deadline_ms)
                listener.close()
            else:
                server_link, device.link = link_pair(deadline_ms=self.deadline_ms)
            try:
                return run_session(sess, device, server_link)
            finally:
                server_link.close()
                if device.link is not None:
                    device.link.close()
                    device.link = None

    def _record_session(self, job: DeploymentJob, target: str, sess: ServerSession,
                        planner: InventoryWalkPlanner | None,
                        transcript: Transcript) -> None:
        target_status = job.target_status[target]
        with self._lock:
            self.transcripts[transcript.session_id] = transcript
            record = self.registry[target]
            record.last_seen = _utcnow()
            record.last_session = transcript.session_id
            if sess.devinfo:
                record.cached_devinfo = dict(sess.devinfo)
                record.devinfo_session = transcript.session_id
            if planner is not None and planner.rows is not None:
                record.cached_inventory = [row.to_json() for row in planner.rows]
                record.inventory_session = transcript.session_id

            target_status.session_id = transcript.session_id
            if not transcript.outcome.ok:
                target_status.state = "failed"
                target_status.reason = transcript.outcome.reason
            else:
                codes = [sess.statuses[key] for key in sorted(sess.issued)
                         if key in sess.statuses]
                code = status.OK
                for value in codes:
                    if not status.is_success(value):
                        code = value
                        break
                else:
                    if status.ACCEPTED in codes:
                        code = status.ACCEPTED
                target_status.state = "done"
                target_status.code = code
            self._persist_session(transcript, target)

    # -- persistence --------------------------------------------------------------

    def persist_state(self, state_dir: Path | str | None = None) -> Path:
        base = Path(state_dir) if state_dir else self.state_dir
        if base is None:
            raise SchemaViolation("no state directory configured")
        with self._lock:
            (base / "trees").mkdir(parents=True, exist_ok=True)
            (base / "sessions").mkdir(parents=True, exist_ok=True)
            doc = {
                "server_id": self.server_id,
                "transport": self.transport,
                "seed": self.fleet.seed,
                "devices": [
                    {
                        "record": self.registry[device_id].to_json(),
                        "capacity": self.fleet.devices[device_id].capacity,
                        "username": self.fleet.devices[device_id].credentials.username,
                        "password": self.fleet.devices[device_id].credentials.password,
                        "clock": self.fleet.devices[device_id].clock_state(),
                        "session_counter": self.fleet.devices[device_id].session_counter,
                    }
                    for device_id in sorted(self.registry)
                ],
            }
            (base / "registry.json").write_text(json.dumps(doc, indent=2) + "\n")
            jobs_doc = [self.jobs[job_id].to_json() for job_id in sorted(self.jobs)]
            (base / "jobs.json").write_text(json.dumps(jobs_doc, indent=2) + "\n")
            for device_id in sorted(self.registry):
                device = self.fleet.devices.get(device_id)
                if device is not None:
                    (base / "trees" / f"{device_id}.xml").write_bytes(
                        tree_xml.save(device.tree))
            for session_id, transcript in self.transcripts.items():
                path = base / "sessions" / f"{session_id}.jsonl"
                if not path.exists():
                    path.write_text(transcript.to_json_lines())
        return base

    def _persist_jobs(self) -> None:
        if self.state_dir is not None:
            self.persist_state()

    def _persist_session(self, transcript: Transcript, device_id: str) -> None:
        """Crash consistency: after a session completes, its transcript and
        the device tree reach disk before the job is reported done."""
        if self.state_dir is None:
            return
        base = self.state_dir
        (base / "trees").mkdir(parents=True, exist_ok=True)
        (base / "sessions").mkdir(parents=True, exist_ok=True)
        device = self.fleet.devices.get(device_id)
        if device is not None:
            (base / "trees" / f"{device_id}.xml").write_bytes(tree_xml.save(device.tree))
        (base / "sessions" / f"{transcript.session_id}.jsonl").write_text(
            transcript.to_json_lines())

    @classmethod
    def restore_state(cls, state_dir: Path | str, *,
                      repository: PayloadRepository | None = None,
                      deadline_ms: int | None = None) -> "ManagementServer":
        base = Path(state_dir)
        registry_path = base / "registry.json"
        if not registry_path.exists():
            return cls(state_dir=base, deadline_ms=deadline_ms)
        try:
            doc = json.loads(registry_path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise SchemaViolation(f"{registry_path}: {exc}") from None
        repository = repository or PayloadRepository()
        fleet = Fleet(devices={}, repository=repository, seed=doc.get("seed", 0))
        records = {}
        for entry in doc.get("devices", []):
            record = DeviceRecord.from_json(entry["record"])
            tree_path = base / "trees" / f"{record.device_id}.xml"
            if not tree_path.exists():
                raise SchemaViolation(f"{tree_path}: missing device tree snapshot")
            try:
                tree = tree_xml.load(tree_path.read_bytes())
            except ScmForgeError as exc:
                raise SchemaViolation(f"{tree_path}: {exc}") from None
            clock = StepClock(counter=entry.get("clock", 0))
            tree.clock = clock
            device = make_device(record.device_id)
            device.tree = tree
            device.agent.tree = tree
            device.capacity = entry.get("capacity", device.capacity)
            device.agent.capacity = device.capacity
            device.agent.fetch = repository.fetch
            device.credentials = PlainCredentials(
                entry.get("username", record.device_id),
                entry.get("password", f"pw-{record.device_id}"))
            device.session_counter = entry.get("session_counter", 0)
            fleet.devices[record.device_id] = device
            records[record.device_id] = record
        server = cls(fleet, server_id=doc.get("server_id", "dm-server"),
                     transport=doc.get("transport", "memory"),
                     state_dir=base, deadline_ms=deadline_ms)
        server.registry.update(records)
        jobs_path = base / "jobs.json"
        if jobs_path.exists():
            try:
                jobs_doc = json.loads(jobs_path.read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise SchemaViolation(f"{jobs_path}: {exc}") from None
            for job_doc in jobs_doc:
                job = DeploymentJob.from_json(job_doc)
                server.jobs[job.job_id] = job
        sessions_dir = base / "sessions"
        if sessions_dir.is_dir():
            for path in sorted(sessions_dir.glob("*.jsonl")):
                transcript = Transcript.from_json_lines(path.read_text())
                if transcript.session_id:
                    server.transcripts[transcript.session_id] = transcript
        return server
