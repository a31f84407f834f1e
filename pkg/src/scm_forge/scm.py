"""Software component lifecycle agent.

Applications live under three containers of the SCM subtree and their
state is readable straight off the tree: ``Download/<id>`` is
downloadable, ``Inventory/Delivered/<id>`` is delivered, and
``Inventory/Deployed/<id>`` is inactive or active per its State leaf.
Exec commands on per-application operation leaves drive the transitions;
everything the agent records is stored as tree leaves so a server can
reconstruct the full inventory remotely with plain Get commands.

Downloads are asynchronous: Exec on Operations/Start returns 202 and the
payload fetch is applied between sessions.
"""
from __future__ import annotations

import hashlib
import json
import re
from collections.abc import Callable
from dataclasses import dataclass, field

from . import status
from .errors import (
    AlreadyExists,
    CapacityExceeded,
    HashMismatch,
    MissingSourceUri,
    OperationNotAllowed,
    SchemaViolation,
)
from .tree import SCM_DELIVERED, SCM_DEPLOYED, SCM_DOWNLOAD, ManagementTree
from .uri import NodeUri

DEFAULT_CAPACITY = 10 * 1024 * 1024

STATE_DOWNLOADABLE = "downloadable"
STATE_DELIVERED = "delivered"
STATE_INACTIVE = "inactive"
STATE_ACTIVE = "active"

ORIGIN_DM_SERVER = "dmserver"
ORIGIN_DOWNLOAD = "download"

OPERATIONS = ("Start", "Install", "Activate", "Deactivate", "Remove", "Update")
DELIVERED_OPERATIONS = ("Install", "Remove", "Update")
DEPLOYED_OPERATIONS = ("Activate", "Deactivate", "Remove", "Update")

# Descriptor leaves in creation order; Data always lands after Hash so the
# integrity gate can see the expected digest.
_DESCRIPTOR_LEAVES = ("ID", "Name", "Version", "Vendor", "Type", "Size", "Hash", "Origin")

_APP_ID_RE = re.compile(r"^[A-Za-z0-9_.-]+$")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class AppDescriptor:
    app_id: str
    name: str
    version: str
    vendor: str
    payload_size: int
    payload_type: str
    payload_hash: str
    source_uri: str | None = None

    def __post_init__(self):
        if not _APP_ID_RE.match(self.app_id):
            raise SchemaViolation(f"app_id {self.app_id!r} is not a tree-safe segment")

    def to_json(self) -> dict:
        doc = {
            "app_id": self.app_id,
            "name": self.name,
            "version": self.version,
            "vendor": self.vendor,
            "payload_size": self.payload_size,
            "payload_type": self.payload_type,
            "payload_hash": self.payload_hash,
        }
        if self.source_uri is not None:
            doc["source_uri"] = self.source_uri
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "AppDescriptor":
        try:
            return cls(
                app_id=doc["app_id"],
                name=doc["name"],
                version=doc["version"],
                vendor=doc["vendor"],
                payload_size=int(doc["payload_size"]),
                payload_type=doc["payload_type"],
                payload_hash=doc["payload_hash"],
                source_uri=doc.get("source_uri"),
            )
        except KeyError as exc:
            raise SchemaViolation(f"descriptor is missing {exc}") from None

    @classmethod
    def from_json_bytes(cls, data: bytes) -> "AppDescriptor":
        try:
            doc = json.loads(data.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise SchemaViolation(f"bad descriptor document: {exc}") from None
        return cls.from_json(doc)

    @classmethod
    def for_payload(cls, app_id: str, name: str, version: str, vendor: str,
                    payload: bytes, payload_type: str = "application/java-archive",
                    source_uri: str | None = None) -> "AppDescriptor":
        return cls(app_id=app_id, name=name, version=version, vendor=vendor,
                   payload_size=len(payload), payload_type=payload_type,
                   payload_hash=sha256_hex(payload), source_uri=source_uri)


@dataclass(frozen=True)
class InventoryRow:
    app_id: str
    name: str
    version: str
    state: str
    origin: str

    def to_json(self) -> dict:
        return {"app_id": self.app_id, "name": self.name, "version": self.version,
                "state": self.state, "origin": self.origin}


@dataclass
class DownloadReport:
    app_id: str
    ok: bool
    detail: str = ""


@dataclass
class ScmAgent:
    tree: ManagementTree
    capacity: int = DEFAULT_CAPACITY
    fetch: Callable[[str], bytes] | None = None
    pending_downloads: list[str] = field(default_factory=list)
    download_failures: list[DownloadReport] = field(default_factory=list)

    # -- queries -------------------------------------------------------------

    def _children(self, container: NodeUri) -> list[str]:
        result = self.tree.get(container)
        assert result.child_names is not None
        return result.child_names

    def _leaf_text(self, uri: NodeUri) -> str:
        value = self.tree.get(uri).value
        return (value or b"").decode("utf-8")

    def find_app(self, app_id: str) -> NodeUri | None:
        for container in (SCM_DOWNLOAD, SCM_DELIVERED, SCM_DEPLOYED):
            if app_id in self._children(container):
                return container.child(app_id)
        return None

    def app_state(self, app_id: str) -> str | None:
        uri = self.find_app(app_id)
        if uri is None:
            return None
        return self._state_at(uri)

    def _state_at(self, app_uri: NodeUri) -> str:
        if SCM_DOWNLOAD.is_prefix_of(app_uri):
            return STATE_DOWNLOADABLE
        if SCM_DELIVERED.is_prefix_of(app_uri):
            return STATE_DELIVERED
        return self._leaf_text(app_uri.child("State"))

    def payload_bytes_in_use(self) -> int:
        used = 0
        for container in (SCM_DELIVERED, SCM_DEPLOYED):
            for app_id in self._children(container):
                data_uri = container.child(app_id).child("Data")
                if self.tree.find(data_uri) is not None:
                    used += self.tree.get(data_uri).size or 0
        return used

    def inventory(self) -> list[InventoryRow]:
        rows = []
        for container in (SCM_DOWNLOAD, SCM_DELIVERED, SCM_DEPLOYED):
            for app_id in self._children(container):
                app_uri = container.child(app_id)
                rows.append(InventoryRow(
                    app_id=app_id,
                    name=self._leaf_text(app_uri.child("Name")),
                    version=self._leaf_text(app_uri.child("Version")),
                    state=self._state_at(app_uri),
                    origin=self._leaf_text(app_uri.child("Origin")),
                ))
        return sorted(rows, key=lambda row: row.app_id)

    # -- subtree construction ----------------------------------------------------

    def _build_app(self, container: NodeUri, descriptor: AppDescriptor, origin: str,
                   payload: bytes | None, operations: tuple[str, ...],
                   state: str | None = None) -> NodeUri:
        app_uri = container.child(descriptor.app_id)
        tree = self.tree
        tree.add(app_uri, kind="interior")
        leaves: list[tuple[str, bytes, str, str]] = [
            ("ID", descriptor.app_id.encode(), "chr", "text/plain"),
            ("Name", descriptor.name.encode(), "chr", "text/plain"),
            ("Version", descriptor.version.encode(), "chr", "text/plain"),
            ("Vendor", descriptor.vendor.encode(), "chr", "text/plain"),
            ("Type", descriptor.payload_type.encode(), "chr", "text/plain"),
            ("Size", str(descriptor.payload_size).encode(), "int", "text/plain"),
            ("Hash", descriptor.payload_hash.encode(), "chr", "text/plain"),
            ("Origin", origin.encode(), "chr", "text/plain"),
        ]
        if descriptor.source_uri is not None:
            leaves.append(("SourceURI", descriptor.source_uri.encode(), "chr", "text/plain"))
        if payload is not None:
            leaves.append(("Data", payload, "bin", descriptor.payload_type))
        if state is not None:
            leaves.append(("State", state.encode(), "chr", "text/plain"))
        for name, value, fmt, mime in leaves:
            tree.add(app_uri.child(name), value=value, fmt=fmt, mime=mime)
        ops_uri = app_uri.child("Operations")
        tree.add(ops_uri, kind="interior")
        for op in operations:
            tree.add(ops_uri.child(op))
        return app_uri

    def _read_descriptor(self, app_uri: NodeUri) -> AppDescriptor:
        source_uri = None
        if self.tree.find(app_uri.child("SourceURI")) is not None:
            source_uri = self._leaf_text(app_uri.child("SourceURI"))
        return AppDescriptor(
            app_id=self._leaf_text(app_uri.child("ID")),
            name=self._leaf_text(app_uri.child("Name")),
            version=self._leaf_text(app_uri.child("Version")),
            vendor=self._leaf_text(app_uri.child("Vendor")),
            payload_size=int(self._leaf_text(app_uri.child("Size"))),
            payload_type=self._leaf_text(app_uri.child("Type")),
            payload_hash=self._leaf_text(app_uri.child("Hash")),
            source_uri=source_uri,
        )

    # -- lifecycle operations ------------------------------------------------------

    def deliver(self, descriptor: AppDescriptor, payload: bytes,
                origin: str = ORIGIN_DM_SERVER) -> NodeUri:
        if self.find_app(descriptor.app_id) is not None:
            raise AlreadyExists(f"app {descriptor.app_id!r} already managed")
        if sha256_hex(payload) != descriptor.payload_hash:
            raise HashMismatch(f"payload digest does not match for {descriptor.app_id!r}")
        if self.payload_bytes_in_use() + len(payload) > self.capacity:
            raise CapacityExceeded(
                f"{len(payload)} bytes do not fit: "
                f"{self.payload_bytes_in_use()}/{self.capacity} in use")
        return self._build_app(SCM_DELIVERED, descriptor, origin, payload,
                               DELIVERED_OPERATIONS)

    def register_download(self, descriptor: AppDescriptor) -> NodeUri:
        if descriptor.source_uri is None:
            raise MissingSourceUri(f"download {descriptor.app_id!r} needs a source URI")
        if self.find_app(descriptor.app_id) is not None:
            raise AlreadyExists(f"app {descriptor.app_id!r} already managed")
        return self._build_app(SCM_DOWNLOAD, descriptor, ORIGIN_DOWNLOAD, None, ("Start",))

    def update(self, app_id: str, descriptor: AppDescriptor, payload: bytes) -> int:
        if descriptor.app_id != app_id:
            raise SchemaViolation("descriptor app_id does not match the update target")
        app_uri = self.find_app(app_id)
        if app_uri is None:
            return status.NOT_FOUND
        if self._leaf_text(app_uri.child("Origin")) != ORIGIN_DM_SERVER:
            return status.NOT_ALLOWED
        if self._state_at(app_uri) == STATE_DOWNLOADABLE:
            return status.NOT_ALLOWED
        if descriptor.version == self._leaf_text(app_uri.child("Version")):
            return status.NOT_ALLOWED
        if sha256_hex(payload) != descriptor.payload_hash:
            return status.COMMAND_FAILED
        current = self.tree.get(app_uri.child("Data")).size or 0
        if self.payload_bytes_in_use() - current + len(payload) > self.capacity:
            return status.COMMAND_FAILED
        tree = self.tree
        tree.replace(app_uri.child("Name"), value=descriptor.name.encode())
        tree.replace(app_uri.child("Version"), value=descriptor.version.encode())
        tree.replace(app_uri.child("Vendor"), value=descriptor.vendor.encode())
        tree.replace(app_uri.child("Type"), value=descriptor.payload_type.encode())
        tree.replace(app_uri.child("Size"), value=str(descriptor.payload_size).encode())
        tree.replace(app_uri.child("Hash"), value=descriptor.payload_hash.encode())
        tree.replace(app_uri.child("Data"), value=payload)
        return status.OK

    def exec_op(self, operation_uri: NodeUri, requester: str | None = None) -> int:
        located = self._locate_operation(operation_uri)
        if located is None:
            return status.NOT_FOUND
        app_uri, op_name = located
        if requester is not None:
            acl_uri = operation_uri
            if self.tree.find(acl_uri) is None:
                acl_uri = app_uri.child("Operations")
            if not self.tree.acl_check(acl_uri, "Exec", requester):
                return status.PERMISSION_DENIED
        state = self._state_at(app_uri)
        if (state, op_name) == (STATE_DOWNLOADABLE, "Start"):
            self.pending_downloads.append(app_uri.name)
            return status.ACCEPTED
        if (state, op_name) == (STATE_DELIVERED, "Install"):
            self._install(app_uri)
            return status.OK
        if (state, op_name) == (STATE_INACTIVE, "Activate"):
            self.tree.replace(app_uri.child("State"), value=b"active")
            return status.OK
        if (state, op_name) == (STATE_ACTIVE, "Deactivate"):
            self.tree.replace(app_uri.child("State"), value=b"inactive")
            return status.OK
        if op_name == "Remove" and state in (STATE_DELIVERED, STATE_INACTIVE, STATE_ACTIVE):
            self.tree.delete(app_uri)
            return status.OK
        return status.NOT_ALLOWED

    def _locate_operation(self, uri: NodeUri) -> tuple[NodeUri, str] | None:
        """Resolve an operation URI to (app node, operation name).

        The URI must name <container>/<app>/Operations/<op> with the app
        actually present in that container and <op> in the operation
        vocabulary; otherwise the operation node is unknown.
        """
        segs = uri.segments
        for container in (SCM_DOWNLOAD, SCM_DELIVERED, SCM_DEPLOYED):
            base = container.segments
            if (len(segs) == len(base) + 3 and segs[:len(base)] == base
                    and segs[-2] == "Operations"):
                op_name = segs[-1]
                app_uri = container.child(segs[len(base)])
                if op_name not in OPERATIONS:
                    return None
                if self.tree.find(app_uri) is None:
                    return None
                return app_uri, op_name
        return None

    def _install(self, app_uri: NodeUri) -> None:
        descriptor = self._read_descriptor(app_uri)
        payload = self.tree.get(app_uri.child("Data")).value or b""
        origin = self._leaf_text(app_uri.child("Origin"))
        self._build_app(SCM_DEPLOYED, descriptor, origin, payload,
                        DEPLOYED_OPERATIONS, state=STATE_INACTIVE)
        self.tree.delete(app_uri)

    # -- asynchronous downloads --------------------------------------------------

    def apply_pending_downloads(self) -> list[DownloadReport]:
        """Resolve queued downloads; runs between sessions, never inside one."""
        reports = []
        pending, self.pending_downloads = self.pending_downloads, []
        for app_id in pending:
            reports.append(self._complete_download(app_id))
        failures = [r for r in reports if not r.ok]
        self.download_failures.extend(failures)
        return reports

    def _complete_download(self, app_id: str) -> DownloadReport:
        app_uri = SCM_DOWNLOAD.child(app_id)
        if self.tree.find(app_uri) is None:
            return DownloadReport(app_id, False, "download object vanished")
        descriptor = self._read_descriptor(app_uri)
        if descriptor.source_uri is None:
            return DownloadReport(app_id, False, "no source URI")
        if self.fetch is None:
            return DownloadReport(app_id, False, "no download mechanism configured")
        try:
            payload = self.fetch(descriptor.source_uri)
        except Exception as exc:
            return DownloadReport(app_id, False, f"fetch failed: {exc}")
        if sha256_hex(payload) != descriptor.payload_hash:
            return DownloadReport(app_id, False, "payload digest mismatch")
        if self.payload_bytes_in_use() + len(payload) > self.capacity:
            return DownloadReport(app_id, False, "capacity exceeded")
        self._build_app(SCM_DELIVERED, descriptor, ORIGIN_DOWNLOAD, payload,
                        DELIVERED_OPERATIONS)
        self.tree.delete(app_uri)
        return DownloadReport(app_id, True)

    # -- gates for remotely issued tree commands ---------------------------------

    def _app_leaf(self, uri: NodeUri) -> tuple[NodeUri, str] | None:
        for container in (SCM_DOWNLOAD, SCM_DELIVERED, SCM_DEPLOYED):
            base = container.segments
            if len(uri.segments) == len(base) + 2 and uri.segments[:len(base)] == base:
                return container.child(uri.segments[len(base)]), uri.name
        return None

    def guard_add(self, uri: NodeUri, value: bytes) -> None:
        """Capacity and integrity gates for Add commands sent by a server."""
        located = self._app_leaf(uri)
        if located is None or located[1] != "Data":
            return
        app_uri, _ = located
        if self.payload_bytes_in_use() + len(value) > self.capacity:
            raise CapacityExceeded(f"{len(value)} bytes exceed device capacity")
        hash_uri = app_uri.child("Hash")
        if self.tree.find(hash_uri) is not None:
            if sha256_hex(value) != self._leaf_text(hash_uri):
                raise HashMismatch("payload digest does not match Hash leaf")

    def guard_replace(self, uri: NodeUri, value: bytes) -> None:
        """Origin and integrity gates for Replace commands sent by a server."""
        located = self._app_leaf(uri)
        if located is None:
            return
        app_uri, leaf = located
        if self.tree.find(app_uri) is None:
            return
        if leaf in ("State", "Origin", "ID"):
            raise OperationNotAllowed(f"{leaf} changes only through Exec operations")
        if self._leaf_text(app_uri.child("Origin")) != ORIGIN_DM_SERVER:
            raise OperationNotAllowed("only server-delivered applications can be updated")
        if leaf == "Data":
            current = 0
            data_uri = app_uri.child("Data")
            if self.tree.find(data_uri) is not None:
                current = self.tree.get(data_uri).size or 0
            if self.payload_bytes_in_use() - current + len(value) > self.capacity:
                raise CapacityExceeded(f"{len(value)} bytes exceed device capacity")
            hash_uri = app_uri.child("Hash")
            if self.tree.find(hash_uri) is not None:
                if sha256_hex(value) != self._leaf_text(hash_uri):
                    raise HashMismatch("payload digest does not match Hash leaf")
