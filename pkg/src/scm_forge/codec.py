"""Bidirectional DM package codec.

One package is one XML document: `<SyncML>` holding a `<SyncHdr>` and a
`<SyncBody>` of commands. The same codec serves both ends; encoding is
deterministic (equal messages produce equal bytes) and decoding is
strict — an element outside the wire vocabulary is an error, never a
silent skip.

Binary item payloads travel base64-encoded and are flagged by item meta
``format="bin"``; everything else is literal XML text.
"""
from __future__ import annotations

import base64
import hashlib
import xml.etree.ElementTree as ET
from dataclasses import dataclass

from .errors import InvariantViolation, ParseError, SchemaViolation, UnknownCommand
from .uri import NodeUri

PROTO_VERSION = "DM/1.2"

COMMAND_TAGS = ("Alert", "Get", "Add", "Replace", "Delete", "Copy",
                "Exec", "Status", "Results", "Final")


@dataclass(frozen=True)
class Credentials:
    """Basic-scheme credentials: the digest binds username, password and session."""

    username: str
    digest: str
    scheme: str = "basic"

    @classmethod
    def compute(cls, username: str, password: str, session_id: str) -> "Credentials":
        raw = f"{username}:{password}:{session_id}".encode()
        return cls(username=username, digest=hashlib.sha256(raw).hexdigest())


@dataclass(frozen=True)
class DmHeader:
    session_id: str
    msg_id: int
    source: str
    target: str
    credentials: Credentials | None = None
    proto_version: str = PROTO_VERSION


@dataclass(frozen=True)
class ItemMeta:
    format: str | None = None
    type: str | None = None
    size: int | None = None


@dataclass(frozen=True)
class DmItem:
    target_uri: NodeUri | None = None
    source_uri: str | None = None
    meta: ItemMeta | None = None
    data: bytes | None = None


@dataclass(frozen=True)
class Alert:
    cmd_id: int
    code: int


@dataclass(frozen=True)
class Get:
    cmd_id: int
    items: tuple[DmItem, ...]


@dataclass(frozen=True)
class Add:
    cmd_id: int
    items: tuple[DmItem, ...]


@dataclass(frozen=True)
class Replace:
    cmd_id: int
    items: tuple[DmItem, ...]


@dataclass(frozen=True)
class Delete:
    cmd_id: int
    items: tuple[DmItem, ...]


@dataclass(frozen=True)
class Copy:
    """Items pair a source (the node to copy) with a target (the new URI)."""

    cmd_id: int
    items: tuple[DmItem, ...]


@dataclass(frozen=True)
class Exec:
    cmd_id: int
    item: DmItem


@dataclass(frozen=True)
class Status:
    cmd_id: int
    msg_ref: int
    cmd_ref: int
    cmd_name: str
    code: int


@dataclass(frozen=True)
class Results:
    cmd_id: int
    msg_ref: int
    cmd_ref: int
    items: tuple[DmItem, ...]


@dataclass(frozen=True)
class Final:
    pass


DmCommand = Alert | Get | Add | Replace | Delete | Copy | Exec | Status | Results | Final

_ITEM_COMMANDS = (Get, Add, Replace, Delete, Copy)


@dataclass(frozen=True)
class DmMessage:
    header: DmHeader
    body: tuple[DmCommand, ...]


def message(header: DmHeader, body: list[DmCommand] | tuple[DmCommand, ...]) -> DmMessage:
    return DmMessage(header=header, body=tuple(body))


# --- invariants -----------------------------------------------------------


def _check_text(value: str | None, what: str) -> None:
    if value and any(ord(ch) < 0x20 for ch in value):
        raise InvariantViolation(f"{what} cannot carry control characters")


def _check_item(item: DmItem, where: str) -> None:
    if item.target_uri is None and item.source_uri is None and item.data is None:
        raise InvariantViolation(f"{where}: item carries neither URI nor data")
    if item.meta is not None and item.meta.size is not None and item.meta.size < 0:
        raise InvariantViolation(f"{where}: negative item size")
    _check_text(item.source_uri, f"{where}: source URI")
    if item.meta is not None:
        _check_text(item.meta.format, f"{where}: meta format")
        _check_text(item.meta.type, f"{where}: meta type")


def validate_message(msg: DmMessage) -> None:
    """Raise InvariantViolation naming the first violated invariant."""
    hdr = msg.header
    if hdr.proto_version != PROTO_VERSION:
        raise InvariantViolation(f"protocol version must be {PROTO_VERSION}")
    if hdr.msg_id < 1:
        raise InvariantViolation("msg_id must be positive")
    if not hdr.session_id:
        raise InvariantViolation("session_id must be non-empty")
    if not hdr.source or not hdr.target:
        raise InvariantViolation("header needs source and target endpoints")
    for value, what in ((hdr.session_id, "session id"), (hdr.source, "source"),
                        (hdr.target, "target")):
        _check_text(value, what)
    if hdr.credentials is not None:
        if hdr.credentials.scheme != "basic":
            raise InvariantViolation("only the basic credential scheme exists")
        if ":" in hdr.credentials.username:
            raise InvariantViolation("credential username cannot contain ':'")
        _check_text(hdr.credentials.username, "credential username")
        _check_text(hdr.credentials.digest, "credential digest")
    if not msg.body:
        raise InvariantViolation("body must be non-empty")

    last_cmd_id = 0
    for pos, cmd in enumerate(msg.body):
        where = f"command #{pos + 1}"
        if isinstance(cmd, Final):
            if pos != len(msg.body) - 1:
                raise InvariantViolation("Final must be the last command")
            continue
        if cmd.cmd_id <= last_cmd_id:
            raise InvariantViolation(f"{where}: cmd_ids must be strictly increasing")
        last_cmd_id = cmd.cmd_id
        if isinstance(cmd, Alert):
            if cmd.code < 0:
                raise InvariantViolation(f"{where}: negative alert code")
        elif isinstance(cmd, _ITEM_COMMANDS):
            if not cmd.items:
                raise InvariantViolation(f"{where}: command carries no items")
            for item in cmd.items:
                _check_item(item, where)
        elif isinstance(cmd, Exec):
            _check_item(cmd.item, where)
        elif isinstance(cmd, Status):
            if cmd.msg_ref < 1 or cmd.cmd_ref < 0:
                raise InvariantViolation(f"{where}: bad Status references")
            if cmd.cmd_name not in COMMAND_TAGS:
                raise InvariantViolation(f"{where}: unknown Cmd name {cmd.cmd_name!r}")
        elif isinstance(cmd, Results):
            if cmd.msg_ref < 1 or cmd.cmd_ref < 1:
                raise InvariantViolation(f"{where}: bad Results references")
            if not cmd.items:
                raise InvariantViolation(f"{where}: Results carries no items")
            for item in cmd.items:
                _check_item(item, where)


# --- encoding -----------------------------------------------------------------


def encode(msg: DmMessage) -> bytes:
    validate_message(msg)
    root = ET.Element("SyncML")
    root.append(_header_element(msg.header))
    body = ET.SubElement(root, "SyncBody")
    for cmd in msg.body:
        body.append(_command_element(cmd))
    return ET.tostring(root, encoding="UTF-8", xml_declaration=True)


def _text_element(parent: ET.Element, tag: str, text: str) -> ET.Element:
    elem = ET.SubElement(parent, tag)
    elem.text = text
    return elem


def _header_element(hdr: DmHeader) -> ET.Element:
    elem = ET.Element("SyncHdr")
    _text_element(elem, "VerProto", hdr.proto_version)
    _text_element(elem, "SessionID", hdr.session_id)
    _text_element(elem, "MsgID", str(hdr.msg_id))
    target = ET.SubElement(elem, "Target")
    _text_element(target, "LocURI", hdr.target)
    source = ET.SubElement(elem, "Source")
    _text_element(source, "LocURI", hdr.source)
    if hdr.credentials is not None:
        cred = ET.SubElement(elem, "Cred")
        meta = ET.SubElement(cred, "Meta")
        _text_element(meta, "Type", hdr.credentials.scheme)
        _text_element(cred, "Data", f"{hdr.credentials.username}:{hdr.credentials.digest}")
    return elem


def _item_element(item: DmItem) -> ET.Element:
    elem = ET.Element("Item")
    if item.target_uri is not None:
        target = ET.SubElement(elem, "Target")
        _text_element(target, "LocURI", item.target_uri.render())
    if item.source_uri is not None:
        source = ET.SubElement(elem, "Source")
        _text_element(source, "LocURI", item.source_uri)
    if item.meta is not None:
        meta = ET.SubElement(elem, "Meta")
        if item.meta.format is not None:
            _text_element(meta, "Format", item.meta.format)
        if item.meta.type is not None:
            _text_element(meta, "Type", item.meta.type)
        if item.meta.size is not None:
            _text_element(meta, "Size", str(item.meta.size))
    if item.data is not None:
        data = ET.SubElement(elem, "Data")
        if _is_binary(item):
            data.text = base64.b64encode(item.data).decode("ascii")
        else:
            try:
                text = item.data.decode("utf-8")
            except UnicodeDecodeError:
                raise InvariantViolation(
                    "non-binary item data must be UTF-8 text; flag it format=bin") from None
            if any(ord(ch) < 0x20 and ch not in "\t\n" for ch in text):
                raise InvariantViolation(
                    "non-binary item data cannot carry control characters")
            data.text = text
    return elem


def _is_binary(item: DmItem) -> bool:
    return item.meta is not None and item.meta.format == "bin"


def _command_element(cmd: DmCommand) -> ET.Element:
    if isinstance(cmd, Final):
        return ET.Element("Final")
    tag = type(cmd).__name__
    elem = ET.Element(tag)
    _text_element(elem, "CmdID", str(cmd.cmd_id))
    if isinstance(cmd, Alert):
        _text_element(elem, "Data", str(cmd.code))
    elif isinstance(cmd, _ITEM_COMMANDS):
        for item in cmd.items:
            elem.append(_item_element(item))
    elif isinstance(cmd, Exec):
        elem.append(_item_element(cmd.item))
    elif isinstance(cmd, Status):
        _text_element(elem, "MsgRef", str(cmd.msg_ref))
        _text_element(elem, "CmdRef", str(cmd.cmd_ref))
        _text_element(elem, "Cmd", cmd.cmd_name)
        _text_element(elem, "Data", str(cmd.code))
    elif isinstance(cmd, Results):
        _text_element(elem, "MsgRef", str(cmd.msg_ref))
        _text_element(elem, "CmdRef", str(cmd.cmd_ref))
        for item in cmd.items:
            elem.append(_item_element(item))
    return elem


# --- decoding ------------------------------------------------------------------


def decode(data: bytes) -> DmMessage:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, column = exc.position if exc.position else (None, None)
        raise ParseError(str(exc), line=line, column=column) from None
    except (LookupError, ValueError) as exc:
        # expat surfaces bogus encoding declarations as LookupError
        raise ParseError(str(exc)) from None
    if root.tag != "SyncML":
        raise ParseError(f"expected SyncML root, found {root.tag!r}")
    children = list(root)
    if [c.tag for c in children] != ["SyncHdr", "SyncBody"]:
        raise ParseError("SyncML must hold SyncHdr then SyncBody")
    header = _parse_header(children[0])
    body: list[DmCommand] = []
    for elem in children[1]:
        body.append(_parse_command(elem))
    msg = DmMessage(header=header, body=tuple(body))
    validate_message(msg)
    return msg


def _require_text(elem: ET.Element | None, what: str) -> str:
    if elem is None:
        raise ParseError(f"missing {what}")
    return elem.text or ""


def _parse_int(text: str, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(f"non-numeric {what}: {text!r}") from None


def _expect_tags(elem: ET.Element, allowed: set[str], where: str) -> None:
    for child in elem:
        if child.tag not in allowed:
            raise ParseError(f"unexpected element {child.tag!r} in {where}")


def _parse_loc_uri(elem: ET.Element, where: str) -> str:
    _expect_tags(elem, {"LocURI"}, where)
    return _require_text(elem.find("LocURI"), f"LocURI in {where}")


def _parse_header(elem: ET.Element) -> DmHeader:
    _expect_tags(elem, {"VerProto", "SessionID", "MsgID", "Target", "Source", "Cred"}, "SyncHdr")
    ver = _require_text(elem.find("VerProto"), "VerProto")
    session_id = _require_text(elem.find("SessionID"), "SessionID")
    msg_id = _parse_int(_require_text(elem.find("MsgID"), "MsgID"), "MsgID")
    target_elem = elem.find("Target")
    source_elem = elem.find("Source")
    if target_elem is None or source_elem is None:
        raise ParseError("SyncHdr needs Target and Source")
    target = _parse_loc_uri(target_elem, "SyncHdr Target")
    source = _parse_loc_uri(source_elem, "SyncHdr Source")
    credentials = None
    cred_elem = elem.find("Cred")
    if cred_elem is not None:
        _expect_tags(cred_elem, {"Meta", "Data"}, "Cred")
        meta_elem = cred_elem.find("Meta")
        if meta_elem is None:
            raise ParseError("Cred needs Meta")
        _expect_tags(meta_elem, {"Type"}, "Cred Meta")
        scheme = _require_text(meta_elem.find("Type"), "Cred Type")
        blob = _require_text(cred_elem.find("Data"), "Cred Data")
        username, sep, digest = blob.partition(":")
        if not sep:
            raise ParseError("Cred Data must be username:digest")
        credentials = Credentials(username=username, digest=digest, scheme=scheme)
    return DmHeader(session_id=session_id, msg_id=msg_id, source=source,
                    target=target, credentials=credentials, proto_version=ver)


def _parse_item(elem: ET.Element) -> DmItem:
    _expect_tags(elem, {"Target", "Source", "Meta", "Data"}, "Item")
    target_uri = None
    target_elem = elem.find("Target")
    if target_elem is not None:
        text = _parse_loc_uri(target_elem, "Item Target")
        try:
            target_uri = NodeUri.parse(text)
        except SchemaViolation as exc:
            raise ParseError(f"bad Target LocURI: {exc}") from None
    source_uri = None
    source_elem = elem.find("Source")
    if source_elem is not None:
        source_uri = _parse_loc_uri(source_elem, "Item Source")
    meta = None
    meta_elem = elem.find("Meta")
    if meta_elem is not None:
        _expect_tags(meta_elem, {"Format", "Type", "Size"}, "Item Meta")
        fmt_elem = meta_elem.find("Format")
        type_elem = meta_elem.find("Type")
        size_elem = meta_elem.find("Size")
        meta = ItemMeta(
            format=fmt_elem.text or "" if fmt_elem is not None else None,
            type=type_elem.text or "" if type_elem is not None else None,
            size=_parse_int(size_elem.text or "", "Item Size") if size_elem is not None else None,
        )
    data = None
    data_elem = elem.find("Data")
    if data_elem is not None:
        text = data_elem.text or ""
        if meta is not None and meta.format == "bin":
            try:
                data = base64.b64decode(text.strip(), validate=True)
            except Exception as exc:
                raise ParseError(f"bad base64 item data: {exc}") from None
        else:
            data = text.encode("utf-8")
    item = DmItem(target_uri=target_uri, source_uri=source_uri, meta=meta, data=data)
    _check_item(item, "Item")
    return item


def _parse_command(elem: ET.Element) -> DmCommand:
    tag = elem.tag
    if tag not in COMMAND_TAGS:
        raise UnknownCommand(f"unknown command element {tag!r}")
    if tag == "Final":
        if len(elem) or (elem.text and elem.text.strip()):
            raise ParseError("Final carries no payload")
        return Final()
    cmd_id = _parse_int(_require_text(elem.find("CmdID"), f"CmdID in {tag}"), "CmdID")
    if cmd_id < 1:
        raise ParseError(f"CmdID must be positive in {tag}")
    if tag == "Alert":
        _expect_tags(elem, {"CmdID", "Data"}, "Alert")
        code = _parse_int(_require_text(elem.find("Data"), "Alert Data"), "Alert Data")
        return Alert(cmd_id=cmd_id, code=code)
    if tag in ("Get", "Add", "Replace", "Delete", "Copy", "Results"):
        allowed = {"CmdID", "Item"} if tag != "Results" else {"CmdID", "Item", "MsgRef", "CmdRef"}
        _expect_tags(elem, allowed, tag)
        items = tuple(_parse_item(e) for e in elem.findall("Item"))
        if tag == "Results":
            msg_ref = _parse_int(_require_text(elem.find("MsgRef"), "MsgRef"), "MsgRef")
            cmd_ref = _parse_int(_require_text(elem.find("CmdRef"), "CmdRef"), "CmdRef")
            return Results(cmd_id=cmd_id, msg_ref=msg_ref, cmd_ref=cmd_ref, items=items)
        cls = {"Get": Get, "Add": Add, "Replace": Replace, "Delete": Delete, "Copy": Copy}[tag]
        return cls(cmd_id=cmd_id, items=items)
    if tag == "Exec":
        _expect_tags(elem, {"CmdID", "Item"}, "Exec")
        item_elems = elem.findall("Item")
        if len(item_elems) != 1:
            raise ParseError("Exec carries exactly one Item")
        return Exec(cmd_id=cmd_id, item=_parse_item(item_elems[0]))
    # Status
    _expect_tags(elem, {"CmdID", "MsgRef", "CmdRef", "Cmd", "Data"}, "Status")
    return Status(
        cmd_id=cmd_id,
        msg_ref=_parse_int(_require_text(elem.find("MsgRef"), "MsgRef"), "MsgRef"),
        cmd_ref=_parse_int(_require_text(elem.find("CmdRef"), "CmdRef"), "CmdRef"),
        cmd_name=_require_text(elem.find("Cmd"), "Cmd"),
        code=_parse_int(_require_text(elem.find("Data"), "Status Data"), "Status Data"),
    )


# --- reply-shape validation ---------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str
    msg_ref: int | None = None
    cmd_ref: int | None = None
    detail: str = ""


def _needs_response(cmd: DmCommand) -> bool:
    return not isinstance(cmd, (Status, Final))


def validate_reply_shape(request: DmMessage, reply: DmMessage) -> list[Violation]:
    """Check that `reply` answers `request` completely and without orphans.

    Every non-Status, non-Final request command needs exactly one Status
    with matching references; a Get whose Status is 200 needs exactly one
    Results. Statuses or Results whose references match nothing are
    orphans. Violations are data, not errors.
    """
    violations: list[Violation] = []
    req_msg_id = request.header.msg_id
    pending: dict[int, DmCommand] = {
        cmd.cmd_id: cmd for cmd in request.body if _needs_response(cmd)
    }

    statuses: dict[int, list[Status]] = {}
    results: dict[int, list[Results]] = {}
    for cmd in reply.body:
        if isinstance(cmd, Status):
            if cmd.msg_ref != req_msg_id or cmd.cmd_ref not in pending:
                violations.append(Violation("orphan_status", cmd.msg_ref, cmd.cmd_ref))
            else:
                statuses.setdefault(cmd.cmd_ref, []).append(cmd)
        elif isinstance(cmd, Results):
            if cmd.msg_ref != req_msg_id or cmd.cmd_ref not in pending:
                violations.append(Violation("orphan_results", cmd.msg_ref, cmd.cmd_ref))
            else:
                results.setdefault(cmd.cmd_ref, []).append(cmd)

    for cmd_id, cmd in pending.items():
        got_statuses = statuses.get(cmd_id, [])
        if not got_statuses:
            violations.append(Violation("missing_status", req_msg_id, cmd_id))
        elif len(got_statuses) > 1:
            violations.append(Violation("duplicate_status", req_msg_id, cmd_id))
        got_results = results.get(cmd_id, [])
        ok = bool(got_statuses) and got_statuses[0].code == 200
        if isinstance(cmd, Get) and ok:
            if not got_results:
                violations.append(Violation("missing_results", req_msg_id, cmd_id))
            elif len(got_results) > 1:
                violations.append(Violation("duplicate_results", req_msg_id, cmd_id))
        elif got_results:
            violations.append(Violation("unexpected_results", req_msg_id, cmd_id))
    return violations


def command_names(msg: DmMessage) -> list[str]:
    return [type(cmd).__name__ for cmd in msg.body]
