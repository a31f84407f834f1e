"""Client and server session state machines.

A session opens with a setup exchange (client alert + credentials +
DevInfo push) and then iterates: the server sends one queued command
batch per package, the client answers every command with a Status (plus
Results for successful Gets), and the server's next package acknowledges
those answers and carries the next batch. When nothing is queued the
server's final package carries acknowledgements and Final only:

* setup close (nothing was ever queued): the server stays open until the
  client acknowledges with a bare Final package, then closes;
* management close: the server closes as it emits the final package and
  the client finishes silently.

There is deliberately no protocol-level timeout; liveness is the
transport's problem (idle deadline on the link).
"""
from __future__ import annotations

import base64
import dataclasses
import json
import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any, Protocol

from . import codec, status
from .codec import (
    Add,
    Alert,
    Copy,
    Credentials,
    Delete,
    DmCommand,
    DmHeader,
    DmItem,
    DmMessage,
    Exec,
    Final,
    Get,
    ItemMeta,
    Replace,
    Results,
    Status,
)
from .errors import (
    InvariantViolation,
    MissingDevInfo,
    OutOfOrderMessage,
    ParseError,
    ScmForgeError,
    SessionMismatch,
    TransportError,
)
from .transport import TransportLink
from .tree import ManagementTree
from .uri import NodeUri

log = logging.getLogger(__name__)

PHASE_SETUP = "setup"
PHASE_MANAGEMENT = "management"
PHASE_CLOSED = "closed"

DEVINFO_URI = NodeUri.parse("./DevInfo")


@dataclass(frozen=True)
class PlainCredentials:
    username: str
    password: str


@dataclass(frozen=True)
class SessionOutcome:
    ok: bool
    reason: str = ""

    @property
    def label(self) -> str:
        return "ok" if self.ok else f"aborted: {self.reason}"


OUTCOME_OK = SessionOutcome(ok=True)


def aborted(reason: str) -> SessionOutcome:
    return SessionOutcome(ok=False, reason=reason)


@dataclass
class ClientStep:
    reply: DmMessage | None
    outcome: SessionOutcome | None
    phase: str


@dataclass
class ServerStep:
    reply: DmMessage | None
    outcome: SessionOutcome | None
    phase: str


class DeviceContext(Protocol):
    """What the client state machine needs from a device."""

    device_id: str
    tree: ManagementTree
    agent: Any
    credentials: PlainCredentials

    def allocate_session_id(self) -> str: ...


class BatchPlanner(Protocol):
    """Grows a session's queue from results already collected."""

    def next_batch(self, sess: "ServerSession") -> list[DmCommand] | None: ...


# --- client ------------------------------------------------------------------


@dataclass
class ClientSession:
    device: Any
    server_id: str
    session_id: str
    phase: str = PHASE_SETUP
    outcome: SessionOutcome | None = None
    next_msg_id: int = 1
    expect_server_msg: int = 1
    alert_cmd_id: int = 1


def client_open(device: DeviceContext, server_id: str,
                credentials: PlainCredentials | None = None,
                session_id: str | None = None) -> tuple[ClientSession, DmMessage]:
    """Open a client-initiated session; returns the session and package #1."""
    credentials = credentials or device.credentials
    session_id = session_id or device.allocate_session_id()
    devinfo = device.tree.find(DEVINFO_URI)
    if devinfo is None or devinfo.children is None:
        raise MissingDevInfo(f"{device.device_id} has no DevInfo subtree")
    items = []
    for name in sorted(devinfo.children):
        child = devinfo.children[name]
        if child.children is not None:
            continue
        props = child.properties
        items.append(DmItem(
            target_uri=DEVINFO_URI.child(name),
            meta=ItemMeta(format=props.format, type=props.type, size=props.size),
            data=child.value or b"",
        ))
    if not items:
        raise MissingDevInfo(f"{device.device_id} has an empty DevInfo subtree")
    sess = ClientSession(device=device, server_id=server_id, session_id=session_id)
    header = DmHeader(
        session_id=session_id, msg_id=1, source=device.device_id, target=server_id,
        credentials=Credentials.compute(credentials.username, credentials.password, session_id),
    )
    pkg = codec.message(header, [
        Alert(cmd_id=1, code=status.ALERT_CLIENT_INITIATED),
        Replace(cmd_id=2, items=tuple(items)),
        Final(),
    ])
    sess.next_msg_id = 2
    return sess, pkg


def _executable(cmd: DmCommand) -> bool:
    return not isinstance(cmd, (Status, Results, Final))


def client_on_package(sess: ClientSession, pkg: DmMessage) -> ClientStep:
    if sess.phase == PHASE_CLOSED:
        raise SessionMismatch("session already closed")
    if pkg.header.session_id != sess.session_id:
        raise SessionMismatch(
            f"expected session {sess.session_id!r}, got {pkg.header.session_id!r}")
    if pkg.header.msg_id != sess.expect_server_msg:
        raise OutOfOrderMessage(
            f"expected server message {sess.expect_server_msg}, got {pkg.header.msg_id}")
    sess.expect_server_msg += 1

    in_setup = sess.phase == PHASE_SETUP
    if in_setup:
        for cmd in pkg.body:
            if (isinstance(cmd, Status) and cmd.cmd_ref == sess.alert_cmd_id
                    and cmd.code == status.UNAUTHORIZED):
                sess.phase = PHASE_CLOSED
                sess.outcome = aborted("authentication rejected")
                return ClientStep(None, sess.outcome, PHASE_SETUP)

    todo = [cmd for cmd in pkg.body if _executable(cmd)]
    if not todo:
        # Pure acknowledgements. In setup the server waits for a closing
        # acknowledgement before it closes; in management it already closed.
        sess.phase = PHASE_CLOSED
        sess.outcome = OUTCOME_OK
        if in_setup:
            header = DmHeader(session_id=sess.session_id, msg_id=sess.next_msg_id,
                              source=sess.device.device_id, target=sess.server_id)
            sess.next_msg_id += 1
            return ClientStep(codec.message(header, [Final()]), sess.outcome, PHASE_SETUP)
        return ClientStep(None, sess.outcome, PHASE_MANAGEMENT)

    sess.phase = PHASE_MANAGEMENT
    body: list[DmCommand] = []
    next_cmd_id = 1
    for cmd in pkg.body:
        if isinstance(cmd, (Status, Final)):
            continue
        answers = _execute_command(sess, cmd, pkg.header)
        for answer in answers:
            if isinstance(answer, Status):
                body.append(Status(cmd_id=next_cmd_id, msg_ref=answer.msg_ref,
                                   cmd_ref=answer.cmd_ref, cmd_name=answer.cmd_name,
                                   code=answer.code))
            else:
                assert isinstance(answer, Results)
                body.append(Results(cmd_id=next_cmd_id, msg_ref=answer.msg_ref,
                                    cmd_ref=answer.cmd_ref, items=answer.items))
            next_cmd_id += 1
    body.append(Final())
    header = DmHeader(session_id=sess.session_id, msg_id=sess.next_msg_id,
                      source=sess.device.device_id, target=sess.server_id)
    sess.next_msg_id += 1
    return ClientStep(codec.message(header, body), None, PHASE_MANAGEMENT)


def _execute_command(sess: ClientSession, cmd: DmCommand,
                     header: DmHeader) -> list[DmCommand]:
    """Run one server command against the device; returns Status (+ Results).

    Commands are atomic individually: a failure leaves the tree untouched
    but does not undo earlier commands in the same package.
    """
    requester = header.source
    name = type(cmd).__name__
    msg_ref = header.msg_id

    def answer(code: int, results: tuple[DmItem, ...] = ()) -> list[DmCommand]:
        out: list[DmCommand] = [Status(cmd_id=0, msg_ref=msg_ref, cmd_ref=cmd.cmd_id,
                                       cmd_name=name, code=code)]
        if results:
            out.append(Results(cmd_id=0, msg_ref=msg_ref, cmd_ref=cmd.cmd_id, items=results))
        return out

    tree: ManagementTree = sess.device.tree
    agent = sess.device.agent

    if isinstance(cmd, Results):
        return answer(status.OK)
    if isinstance(cmd, Alert):
        return answer(status.OK)

    if isinstance(cmd, Exec):
        uri = cmd.item.target_uri
        if uri is None:
            return answer(status.NOT_FOUND)
        return answer(agent.exec_op(uri, requester))

    code = status.OK
    results: list[DmItem] = []
    assert isinstance(cmd, (Get, Add, Replace, Delete, Copy))
    for item in cmd.items:
        try:
            if isinstance(cmd, Get):
                if item.target_uri is None:
                    raise ScmForgeError("Get item has no target")
                results.append(_get_item(tree, item.target_uri, requester))
            elif isinstance(cmd, Add):
                _apply_add(tree, agent, item, requester)
            elif isinstance(cmd, Replace):
                if item.target_uri is None or item.data is None:
                    raise ScmForgeError("Replace item needs target and data")
                if agent is not None:
                    agent.guard_replace(item.target_uri, item.data)
                tree.replace(item.target_uri, requester, value=item.data)
            elif isinstance(cmd, Delete):
                if item.target_uri is None:
                    raise ScmForgeError("Delete item has no target")
                tree.delete(item.target_uri, requester)
            else:
                if item.target_uri is None or item.source_uri is None:
                    raise ScmForgeError("Copy item needs source and target")
                tree.copy(NodeUri.parse(item.source_uri), item.target_uri, requester)
        except ScmForgeError as exc:
            code = status.code_for_error(exc)
            log.debug("command %s#%d failed on %s: %s", name, cmd.cmd_id,
                      sess.device.device_id, exc)
            break
    if isinstance(cmd, Get) and code == status.OK:
        return answer(code, tuple(results))
    return answer(code)


def _get_item(tree: ManagementTree, uri: NodeUri, requester: str | None) -> DmItem:
    result = tree.get(uri, requester)
    if result.is_interior:
        data = "/".join(result.child_names or []).encode()
        return DmItem(source_uri=uri.render(),
                      meta=ItemMeta(format="node", type="", size=len(data)), data=data)
    return DmItem(source_uri=uri.render(),
                  meta=ItemMeta(format=result.format, type=result.mime_type,
                                size=result.size),
                  data=result.value or b"")


def _apply_add(tree: ManagementTree, agent: Any, item: DmItem,
               requester: str | None) -> None:
    if item.target_uri is None:
        raise ScmForgeError("Add item has no target")
    fmt = item.meta.format if item.meta and item.meta.format else "chr"
    mime = item.meta.type if item.meta and item.meta.type else ""
    data = item.data or b""
    if agent is not None and data:
        agent.guard_add(item.target_uri, data)
    if fmt == "node":
        tree.add(item.target_uri, requester, kind="interior", mime=mime)
    else:
        tree.add(item.target_uri, requester, value=data, fmt=fmt, mime=mime)


# --- server ---------------------------------------------------------------------


@dataclass
class ServerSession:
    server_id: str
    passwords: Callable[[str], str | None]
    queue: list[list[DmCommand]] = field(default_factory=list)
    planner: BatchPlanner | None = None
    device_id: str | None = None
    session_id: str | None = None
    phase: str = PHASE_SETUP
    outcome: SessionOutcome | None = None
    awaiting_ack: bool = False
    next_msg_id: int = 1
    expect_client_msg: int = 1
    last_sent: DmMessage | None = None
    devinfo: dict[str, str] = field(default_factory=dict)
    alert_code: int | None = None
    issued: dict[tuple[int, int], DmCommand] = field(default_factory=dict)
    statuses: dict[tuple[int, int], int] = field(default_factory=dict)
    results: dict[tuple[int, int], tuple[DmItem, ...]] = field(default_factory=dict)

    def pending_ledger(self) -> set[tuple[int, int]]:
        return {key for key in self.issued if key not in self.statuses}

    def result_items(self, uri: str) -> tuple[DmItem, ...] | None:
        """Latest Results for the issued Get targeting `uri`."""
        found = None
        for key, cmd in self.issued.items():
            if isinstance(cmd, Get) and key in self.results:
                for item in cmd.items:
                    if item.target_uri is not None and item.target_uri.render() == uri:
                        found = self.results[key]
        return found


def server_on_package(sess: ServerSession, pkg: DmMessage) -> ServerStep:
    if sess.phase == PHASE_CLOSED:
        raise SessionMismatch("session already closed")
    if sess.session_id is None:
        sess.session_id = pkg.header.session_id
        if sess.device_id is None:
            sess.device_id = pkg.header.source
    elif pkg.header.session_id != sess.session_id:
        raise SessionMismatch(
            f"expected session {sess.session_id!r}, got {pkg.header.session_id!r}")
    if pkg.header.msg_id != sess.expect_client_msg:
        raise OutOfOrderMessage(
            f"expected client message {sess.expect_client_msg}, got {pkg.header.msg_id}")
    sess.expect_client_msg += 1

    if sess.awaiting_ack:
        if any(_executable(cmd) or isinstance(cmd, (Status, Results)) for cmd in pkg.body):
            return _abort(sess, "closing acknowledgement carries commands", PHASE_SETUP)
        sess.phase = PHASE_CLOSED
        sess.outcome = OUTCOME_OK
        return ServerStep(None, sess.outcome, PHASE_SETUP)

    if sess.phase == PHASE_SETUP:
        return _setup_step(sess, pkg)
    return _management_step(sess, pkg)


def _abort(sess: ServerSession, reason: str, phase: str) -> ServerStep:
    sess.phase = PHASE_CLOSED
    sess.outcome = aborted(reason)
    log.debug("session %s aborted: %s", sess.session_id, reason)
    return ServerStep(None, sess.outcome, phase)


def _setup_step(sess: ServerSession, pkg: DmMessage) -> ServerStep:
    alert = next((c for c in pkg.body if isinstance(c, Alert)), None)
    if alert is None:
        return _abort(sess, "setup package carries no Alert", PHASE_SETUP)
    sess.alert_code = alert.code

    creds = pkg.header.credentials
    auth_ok = False
    if creds is not None and creds.scheme == "basic":
        password = sess.passwords(creds.username)
        if password is not None:
            expected = Credentials.compute(creds.username, password, pkg.header.session_id)
            auth_ok = expected.digest == creds.digest

    code = status.OK if auth_ok else status.UNAUTHORIZED
    acks = [Status(cmd_id=0, msg_ref=pkg.header.msg_id, cmd_ref=cmd.cmd_id,
                   cmd_name=type(cmd).__name__, code=code)
            for cmd in pkg.body if _executable(cmd)]
    if not auth_ok:
        reply = _emit(sess, acks, None)
        sess.phase = PHASE_CLOSED
        sess.outcome = aborted("authentication failed")
        return ServerStep(reply, sess.outcome, PHASE_SETUP)

    for cmd in pkg.body:
        if isinstance(cmd, Replace):
            for item in cmd.items:
                if item.target_uri is not None and DEVINFO_URI.is_prefix_of(item.target_uri):
                    sess.devinfo[item.target_uri.name] = (item.data or b"").decode("utf-8")

    batch = _next_batch(sess)
    if batch is None:
        reply = _emit(sess, acks, None)
        sess.awaiting_ack = True
        return ServerStep(reply, None, PHASE_SETUP)
    reply = _emit(sess, acks, batch)
    sess.phase = PHASE_MANAGEMENT
    return ServerStep(reply, None, PHASE_MANAGEMENT)


def _management_step(sess: ServerSession, pkg: DmMessage) -> ServerStep:
    assert sess.last_sent is not None
    violations = codec.validate_reply_shape(sess.last_sent, pkg)
    if violations:
        first = violations[0]
        return _abort(
            sess,
            f"reply shape violation: {first.kind} (msg {first.msg_ref}, cmd {first.cmd_ref})",
            PHASE_MANAGEMENT,
        )
    for cmd in pkg.body:
        if isinstance(cmd, Status):
            sess.statuses[(cmd.msg_ref, cmd.cmd_ref)] = cmd.code
        elif isinstance(cmd, Results):
            sess.results[(cmd.msg_ref, cmd.cmd_ref)] = cmd.items

    acks = [Status(cmd_id=0, msg_ref=pkg.header.msg_id, cmd_ref=cmd.cmd_id,
                   cmd_name=type(cmd).__name__, code=status.OK)
            for cmd in pkg.body if isinstance(cmd, Results) or _executable(cmd)]
    batch = _next_batch(sess)
    if batch is None:
        reply = _emit(sess, acks, None)
        sess.phase = PHASE_CLOSED
        sess.outcome = OUTCOME_OK
        return ServerStep(reply, sess.outcome, PHASE_MANAGEMENT)
    reply = _emit(sess, acks, batch)
    return ServerStep(reply, None, PHASE_MANAGEMENT)


def _next_batch(sess: ServerSession) -> list[DmCommand] | None:
    if sess.queue:
        return sess.queue.pop(0)
    if sess.planner is not None:
        return sess.planner.next_batch(sess)
    return None


def _emit(sess: ServerSession, acks: list[Status], batch: list[DmCommand] | None) -> DmMessage:
    """Assemble and number the next server package; batches join the ledger."""
    assert sess.session_id is not None and sess.device_id is not None
    msg_id = sess.next_msg_id
    sess.next_msg_id += 1
    body: list[DmCommand] = []
    next_cmd_id = 1
    for ack in acks:
        body.append(Status(cmd_id=next_cmd_id, msg_ref=ack.msg_ref, cmd_ref=ack.cmd_ref,
                           cmd_name=ack.cmd_name, code=ack.code))
        next_cmd_id += 1
    for cmd in batch or []:
        renumbered = dataclasses.replace(cmd, cmd_id=next_cmd_id)
        body.append(renumbered)
        sess.issued[(msg_id, next_cmd_id)] = renumbered
        next_cmd_id += 1
    body.append(Final())
    header = DmHeader(session_id=sess.session_id, msg_id=msg_id,
                      source=sess.server_id, target=sess.device_id)
    msg = codec.message(header, body)
    sess.last_sent = msg
    return msg


# --- transcripts ---------------------------------------------------------------


@dataclass
class TranscriptEntry:
    direction: str
    msg_id: int
    phase: str
    raw: bytes
    commands: list[str]

    def to_json(self) -> dict:
        return {
            "direction": self.direction,
            "msg_id": self.msg_id,
            "phase": self.phase,
            "raw": base64.b64encode(self.raw).decode("ascii"),
            "commands": self.commands,
        }


@dataclass
class Transcript:
    session_id: str
    device_id: str
    entries: list[TranscriptEntry] = field(default_factory=list)
    outcome: SessionOutcome = OUTCOME_OK

    def to_json_lines(self) -> str:
        lines = [json.dumps(entry.to_json(), separators=(",", ":")) for entry in self.entries]
        lines.append(json.dumps(
            {"outcome": "ok" if self.outcome.ok else "aborted",
             "reason": self.outcome.reason,
             "session_id": self.session_id,
             "device_id": self.device_id},
            separators=(",", ":")))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_json_lines(cls, text: str) -> "Transcript":
        entries = []
        outcome = OUTCOME_OK
        session_id = ""
        device_id = ""
        for line in text.splitlines():
            if not line.strip():
                continue
            doc = json.loads(line)
            if "outcome" in doc:
                outcome = (OUTCOME_OK if doc["outcome"] == "ok"
                           else aborted(doc.get("reason", "")))
                session_id = doc.get("session_id", "")
                device_id = doc.get("device_id", "")
            else:
                entries.append(TranscriptEntry(
                    direction=doc["direction"], msg_id=doc["msg_id"], phase=doc["phase"],
                    raw=base64.b64decode(doc["raw"]), commands=list(doc.get("commands", [])),
                ))
        return cls(session_id=session_id, device_id=device_id,
                   entries=entries, outcome=outcome)


def run_session(server: ServerSession, device: Any, link: TransportLink) -> Transcript:
    """Drive one complete exchange; `link` is the server's endpoint and the
    device answers through its own `device.link`.

    Transport failures and protocol violations abort the session; the
    transcript records every package as sent, so a package lost in
    transit still appears with the bytes its sender emitted.
    """
    transcript = Transcript(session_id="", device_id=device.device_id)
    if device.agent is not None:
        device.agent.apply_pending_downloads()

    def send(endpoint: TransportLink, msg: DmMessage, direction: str, phase: str) -> None:
        raw = codec.encode(msg)
        endpoint.send(raw)
        transcript.entries.append(TranscriptEntry(
            direction=direction, msg_id=msg.header.msg_id, phase=phase,
            raw=raw, commands=codec.command_names(msg)))

    try:
        csess, pkg1 = client_open(device, server.server_id)
        transcript.session_id = csess.session_id
        send(device.link, pkg1, "client", PHASE_SETUP)
        while True:
            step = server_on_package(server, codec.decode(link.receive()))
            if step.reply is not None:
                send(link, step.reply, "server", step.phase)
            if step.outcome is not None and step.reply is None:
                transcript.outcome = step.outcome
                break

            cstep = client_on_package(csess, codec.decode(device.link.receive()))
            if cstep.reply is not None:
                send(device.link, cstep.reply, "client", cstep.phase)
            if cstep.outcome is not None:
                transcript.outcome = cstep.outcome
                if cstep.reply is not None and server.phase != PHASE_CLOSED:
                    # Closing acknowledgement is in flight; the server
                    # consumes it and closes.
                    final = server_on_package(server, codec.decode(link.receive()))
                    if final.outcome is not None:
                        transcript.outcome = final.outcome
                break
    except (TransportError, ParseError, InvariantViolation) as exc:
        reason = f"{type(exc).__name__}: {exc}"
        transcript.outcome = aborted(reason)
        server.phase = PHASE_CLOSED
        server.outcome = transcript.outcome
    return transcript
