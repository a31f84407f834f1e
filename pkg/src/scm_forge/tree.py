"""The device-side management tree.

A hierarchical store of managed objects. Each node carries the eight
standard properties, an ACL consulted with per-command-kind fallback to
the nearest ancestor, and a permanence flag: permanent nodes are built
into the device and can never be deleted or moved.

All mutating commands are validate-then-apply: a command that raises
leaves the tree byte-identical to before. ``verno`` counts successful
mutations of a node (value, properties, or child set) and ``tstamp``
records the last one.
"""
from __future__ import annotations

from collections.abc import Callable, Iterator
from dataclasses import dataclass
from datetime import datetime, timezone

from .acl import COMMAND_KINDS, Acl
from .errors import (
    AlreadyExists,
    ImmutableProperty,
    NotFound,
    ParentIsLeaf,
    PermanentNode,
    PermissionDenied,
    SchemaViolation,
    SourceContainsDestination,
)
from .uri import NodeUri

PERMANENT = "permanent"
DYNAMIC = "dynamic"

FORMAT_NODE = "node"
FORMATS = ("node", "chr", "int", "bool", "bin", "xml")

RFC3339_FMT = "%Y-%m-%dT%H:%M:%SZ"

# Characters literal XML text cannot carry back losslessly: raw control
# characters are invalid, and a bare \r is normalized away by any parser.
_FORBIDDEN_TEXT = {c for c in range(0x20) if c not in (0x09, 0x0A)}

# Properties that only the tree itself may write.
IMMUTABLE_PROPERTIES = ("name", "permanence", "verno", "tstamp", "size")
REPLACEABLE_PROPERTIES = ("title", "type", "acl", "format")


def default_clock() -> datetime:
    return datetime.now(timezone.utc)


def validate_text_value(value: bytes, fmt: str) -> None:
    """Non-binary leaf values must persist as literal XML text."""
    if fmt == "bin":
        return
    try:
        text = value.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise SchemaViolation(f"{fmt} value is not valid UTF-8: {exc}") from None
    for ch in text:
        if ord(ch) in _FORBIDDEN_TEXT:
            raise SchemaViolation(f"{fmt} value contains control character {ord(ch):#x}")


def validate_attr_text(text: str, what: str) -> None:
    """Strings stored as XML attributes; \\t \\n \\r survive via char refs."""
    for ch in text:
        if ord(ch) < 0x20 and ch not in "\t\n\r":
            raise SchemaViolation(f"{what} contains control character {ord(ch):#x}")


@dataclass
class NodeProperties:
    acl: Acl
    format: str
    name: str
    size: int
    title: str
    tstamp: str
    type: str
    verno: int


@dataclass
class TreeNode:
    properties: NodeProperties
    permanence: str
    children: dict[str, TreeNode] | None = None  # None for leaves
    value: bytes | None = None                   # None for interior nodes

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    def deep_copy(self) -> "TreeNode":
        props = NodeProperties(**vars(self.properties))
        node = TreeNode(properties=props, permanence=self.permanence, value=self.value)
        if self.children is not None:
            node.children = {name: child.deep_copy() for name, child in self.children.items()}
        return node


@dataclass
class GetResult:
    """Interior nodes report sorted child names; leaves report value and meta."""

    child_names: list[str] | None = None
    value: bytes | None = None
    format: str | None = None
    mime_type: str | None = None
    size: int | None = None

    @property
    def is_interior(self) -> bool:
        return self.child_names is not None


def make_node(
    *,
    name: str,
    kind: str,
    tstamp: str,
    value: bytes = b"",
    fmt: str | None = None,
    mime: str = "",
    title: str = "",
    acl: Acl | None = None,
    permanence: str = DYNAMIC,
) -> TreeNode:
    """Build a detached node; shared by `add`, fixtures, and the XML loader."""
    if kind not in ("interior", "leaf"):
        raise SchemaViolation(f"bad node kind {kind!r}")
    if fmt is None:
        fmt = FORMAT_NODE if kind == "interior" else "chr"
    if fmt not in FORMATS:
        raise SchemaViolation(f"unknown format {fmt!r}")
    if (fmt == FORMAT_NODE) != (kind == "interior"):
        raise SchemaViolation("format 'node' is for interior nodes exactly")
    if permanence not in (PERMANENT, DYNAMIC):
        raise SchemaViolation(f"bad permanence {permanence!r}")
    validate_attr_text(title, "title")
    validate_attr_text(mime, "type")
    if kind == "interior":
        if value:
            raise SchemaViolation("interior nodes carry no value")
        return TreeNode(
            properties=NodeProperties(
                acl=acl or Acl(), format=FORMAT_NODE, name=name, size=0,
                title=title, tstamp=tstamp, type=mime, verno=0,
            ),
            permanence=permanence,
            children={},
        )
    validate_text_value(value, fmt)
    return TreeNode(
        properties=NodeProperties(
            acl=acl or Acl(), format=fmt, name=name, size=len(value),
            title=title, tstamp=tstamp, type=mime, verno=0,
        ),
        permanence=permanence,
        value=value,
    )


class ManagementTree:
    """URI-addressed node store owned by one device.

    ``requester`` is the server identifier checked against ACLs; ``None``
    means the device itself, which bypasses ACL checks (the device may
    always change its own tree).
    """

    def __init__(self, device_id: str, root: TreeNode | None = None,
                 clock: Callable[[], datetime] | None = None):
        self.device_id = device_id
        self.clock = clock or default_clock
        if root is None:
            root = make_node(kind="interior", name=".", tstamp=self._now(),
                             acl=Acl.open_acl(), permanence=PERMANENT)
        self.root = root

    def _now(self) -> str:
        return self.clock().strftime(RFC3339_FMT)

    # -- lookup ------------------------------------------------------------

    def find(self, uri: NodeUri) -> TreeNode | None:
        node = self.root
        for seg in uri.segments:
            if node.children is None:
                return None
            node = node.children.get(seg)
            if node is None:
                return None
        return node

    def _require(self, uri: NodeUri) -> TreeNode:
        node = self.find(uri)
        if node is None:
            raise NotFound(f"no node at {uri}")
        return node

    def iter_nodes(self) -> Iterator[tuple[NodeUri, TreeNode]]:
        """Depth-first, children in sorted name order."""
        stack: list[tuple[NodeUri, TreeNode]] = [(NodeUri(), self.root)]
        while stack:
            uri, node = stack.pop()
            yield uri, node
            if node.children is not None:
                for name in sorted(node.children, reverse=True):
                    stack.append((uri.child(name), node.children[name]))

    def uris(self) -> list[NodeUri]:
        return [uri for uri, _ in self.iter_nodes()]

    # -- ACLs -----------------------------------------------------------------

    def effective_acl_nodes(self, uri: NodeUri) -> list[TreeNode]:
        """Nodes from `uri` up to the root, for ancestor-fallback walks."""
        nodes = [self.root]
        node = self.root
        for seg in uri.segments:
            assert node.children is not None
            node = node.children[seg]
            nodes.append(node)
        nodes.reverse()
        return nodes

    def acl_check(self, uri: NodeUri, kind: str, server_id: str) -> bool:
        """Total: a missing node or unknown kind simply yields False."""
        if kind not in COMMAND_KINDS or self.find(uri) is None:
            return False
        for node in self.effective_acl_nodes(uri):
            if node.properties.acl.mentions(kind):
                return node.properties.acl.allows(kind, server_id)
        return False

    def _gate(self, uri: NodeUri, kind: str, requester: str | None) -> None:
        if requester is None:
            return
        if not self.acl_check(uri, kind, requester):
            raise PermissionDenied(f"{requester!r} may not {kind} {uri}")

    # -- commands ------------------------------------------------------------

    def get(self, uri: NodeUri, requester: str | None = None) -> GetResult:
        node = self._require(uri)
        self._gate(uri, "Get", requester)
        if node.children is not None:
            return GetResult(child_names=sorted(node.children))
        props = node.properties
        return GetResult(value=node.value, format=props.format,
                         mime_type=props.type, size=props.size)

    def add(
        self,
        uri: NodeUri,
        requester: str | None = None,
        *,
        kind: str = "leaf",
        value: bytes = b"",
        fmt: str | None = None,
        mime: str = "",
        title: str = "",
        acl: Acl | None = None,
        permanence: str = DYNAMIC,
    ) -> None:
        if uri.is_root:
            raise AlreadyExists("root always exists")
        parent = self.find(uri.parent())
        if parent is None:
            raise NotFound(f"no parent for {uri}")
        if parent.children is None:
            raise ParentIsLeaf(f"parent of {uri} is a leaf")
        if uri.name in parent.children:
            raise AlreadyExists(f"node exists at {uri}")
        self._gate(uri.parent(), "Add", requester)
        node = make_node(kind=kind, name=uri.name, tstamp="", value=value, fmt=fmt,
                         mime=mime, title=title, acl=acl, permanence=permanence)
        # Clock ticks only once validation cannot fail anymore.
        now = self._now()
        node.properties.tstamp = now
        parent.children[uri.name] = node
        parent.properties.verno += 1
        parent.properties.tstamp = now

    def replace(
        self,
        uri: NodeUri,
        requester: str | None = None,
        *,
        value: bytes | None = None,
        props: dict | None = None,
    ) -> None:
        node = self._require(uri)
        self._gate(uri, "Replace", requester)
        props = dict(props or {})
        if value is None and not props:
            raise SchemaViolation("replace carries neither value nor properties")
        for key in props:
            if key in IMMUTABLE_PROPERTIES:
                raise ImmutableProperty(f"{key} is not replaceable")
            if key not in REPLACEABLE_PROPERTIES:
                raise SchemaViolation(f"unknown property {key!r}")
        if value is not None and node.children is not None:
            raise ImmutableProperty("interior nodes carry no value")
        new_fmt = props.get("format")
        if new_fmt is not None:
            if new_fmt not in FORMATS:
                raise SchemaViolation(f"unknown format {new_fmt!r}")
            if node.children is not None or new_fmt == FORMAT_NODE:
                raise ImmutableProperty("format cannot change a node's kind")
        acl = props.get("acl")
        if acl is not None and not isinstance(acl, Acl):
            raise SchemaViolation("acl property must be an Acl")
        effective_fmt = new_fmt or node.properties.format
        if value is not None:
            validate_text_value(value, effective_fmt)
        elif new_fmt is not None and node.value is not None:
            validate_text_value(node.value, effective_fmt)
        if "title" in props:
            validate_attr_text(str(props["title"]), "title")
        if "type" in props:
            validate_attr_text(str(props["type"]), "type")

        # Validation done; apply.
        if value is not None:
            node.value = value
            node.properties.size = len(value)
        if new_fmt is not None:
            node.properties.format = new_fmt
        if "title" in props:
            node.properties.title = str(props["title"])
        if "type" in props:
            node.properties.type = str(props["type"])
        if acl is not None:
            node.properties.acl = acl
        node.properties.verno += 1
        node.properties.tstamp = self._now()

    def delete(self, uri: NodeUri, requester: str | None = None) -> None:
        node = self._require(uri)
        if uri.is_root:
            raise PermanentNode("the root cannot be deleted")
        if self._subtree_has_permanent(node):
            raise PermanentNode(f"{uri} is permanent")
        self._gate(uri, "Delete", requester)
        parent = self.find(uri.parent())
        assert parent is not None and parent.children is not None
        del parent.children[uri.name]
        parent.properties.verno += 1
        parent.properties.tstamp = self._now()

    def copy(self, src: NodeUri, dst: NodeUri, requester: str | None = None) -> None:
        src_node = self.find(src)
        if src_node is None:
            raise NotFound(f"no node at {src}")
        if self.find(dst) is not None:
            raise AlreadyExists(f"node exists at {dst}")
        dst_parent = self.find(dst.parent())
        if dst_parent is None:
            raise NotFound(f"no parent for {dst}")
        if dst_parent.children is None:
            raise ParentIsLeaf(f"parent of {dst} is a leaf")
        if src.is_prefix_of(dst):
            raise SourceContainsDestination(f"{src} contains {dst}")
        self._gate(src, "Get", requester)
        self._gate(dst.parent(), "Add", requester)
        now = self._now()
        copy_root = self._copy_subtree(src_node, now)
        copy_root.properties.name = dst.name
        dst_parent.children[dst.name] = copy_root
        dst_parent.properties.verno += 1
        dst_parent.properties.tstamp = now

    # -- helpers -----------------------------------------------------------

    @staticmethod
    def _subtree_has_permanent(node: TreeNode) -> bool:
        if node.permanence == PERMANENT:
            return True
        if node.children is not None:
            return any(ManagementTree._subtree_has_permanent(c) for c in node.children.values())
        return False

    def _copy_subtree(self, node: TreeNode, now: str) -> TreeNode:
        copied = node.deep_copy()

        def refresh(n: TreeNode) -> None:
            n.permanence = DYNAMIC
            n.properties.verno = 0
            n.properties.tstamp = now
            if n.children is not None:
                for child in n.children.values():
                    refresh(child)

        refresh(copied)
        return copied


# -- standard fixture -------------------------------------------------------------

DEVINFO_LEAVES = ("DevId", "Man", "Mod", "DmV", "Lang")
DEVDETAIL_LEAVES = ("DevTyp", "OEM", "FwV", "SwV", "HwV")

SCM_ROOT = NodeUri.parse("./SCM")
SCM_DELIVERED = NodeUri.parse("./SCM/Inventory/Delivered")
SCM_DEPLOYED = NodeUri.parse("./SCM/Inventory/Deployed")
SCM_DOWNLOAD = NodeUri.parse("./SCM/Download")


def build_default_tree(
    device_id: str,
    *,
    clock: Callable[[], datetime] | None = None,
    devinfo: dict[str, str] | None = None,
    devdetail: dict[str, str] | None = None,
) -> ManagementTree:
    """Seed the permanent standard objects plus the SCM scaffolding.

    DevInfo/DevDetail leaf values may be overridden per device; unknown
    keys are rejected so fixtures stay within the fixed layouts.
    """
    info = {"DevId": device_id, "Man": "SimWorks", "Mod": "SW-100", "DmV": "1.2", "Lang": "en"}
    detail = {"DevTyp": "simulator", "OEM": "SimWorks", "FwV": "fw-1.0.0",
              "SwV": "sw-1.0.0", "HwV": "hw-1.0"}
    for overrides, base in ((devinfo, info), (devdetail, detail)):
        for key, val in (overrides or {}).items():
            if key not in base:
                raise SchemaViolation(f"unknown standard leaf {key!r}")
            base[key] = val

    tree = ManagementTree(device_id, clock=clock)
    now = tree._now()

    def interior(name: str) -> TreeNode:
        return make_node(kind="interior", name=name, tstamp=now, permanence=PERMANENT)

    def leaf(name: str, text: str) -> TreeNode:
        return make_node(kind="leaf", name=name, tstamp=now, value=text.encode(),
                         mime="text/plain", permanence=PERMANENT)

    assert tree.root.children is not None
    devinfo_node = interior("DevInfo")
    for name in DEVINFO_LEAVES:
        devinfo_node.children[name] = leaf(name, info[name])
    devdetail_node = interior("DevDetail")
    for name in DEVDETAIL_LEAVES:
        devdetail_node.children[name] = leaf(name, detail[name])
    scm = interior("SCM")
    inventory = interior("Inventory")
    inventory.children.update(Delivered=interior("Delivered"), Deployed=interior("Deployed"))
    scm.children.update(Inventory=inventory, Download=interior("Download"))
    tree.root.children.update(
        DevInfo=devinfo_node, DevDetail=devdetail_node, DMAcc=interior("DMAcc"), SCM=scm,
    )
    return tree
