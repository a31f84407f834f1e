"""Tree persistence: the device configuration file, XML, UTF-8.

The writer is canonical (children sorted by name, fixed attribute order,
two-space indentation) so that load followed by save reproduces a saved
document byte for byte.
"""
from __future__ import annotations

import base64
import xml.etree.ElementTree as ET

from .acl import Acl
from .errors import ParseError, SchemaViolation
from .tree import DYNAMIC, FORMAT_NODE, PERMANENT, ManagementTree, NodeProperties, TreeNode

_NODE_CHILD_TAGS = {"Props", "ACL", "Value", "Node"}


def save(tree: ManagementTree) -> bytes:
    root = ET.Element("MgmtTree", {"device-id": tree.device_id})
    root.append(_node_element(tree.root))
    ET.indent(root, space="  ")
    return ET.tostring(root, encoding="UTF-8", xml_declaration=True)


def _node_element(node: TreeNode) -> ET.Element:
    props = node.properties
    elem = ET.Element("Node", {"name": props.name, "permanence": node.permanence})
    ET.SubElement(elem, "Props", {
        "format": props.format,
        "type": props.type,
        "title": props.title,
        "verno": str(props.verno),
        "tstamp": props.tstamp,
        "size": str(props.size),
    })
    if props.acl.grants:
        acl = ET.SubElement(elem, "ACL")
        acl.text = props.acl.to_string()
    if node.value:
        value = ET.SubElement(elem, "Value")
        if props.format == "bin":
            value.text = base64.b64encode(node.value).decode("ascii")
        else:
            value.text = node.value.decode("utf-8")
    if node.children is not None:
        for name in sorted(node.children):
            elem.append(_node_element(node.children[name]))
    return elem


def load(data: bytes) -> ManagementTree:
    try:
        root = ET.fromstring(data)
    except ET.ParseError as exc:
        line, column = exc.position if exc.position else (None, None)
        raise ParseError(str(exc), line=line, column=column) from None
    except (LookupError, ValueError) as exc:
        # expat surfaces bogus encoding declarations as LookupError
        raise ParseError(str(exc)) from None
    if root.tag != "MgmtTree":
        raise SchemaViolation(f"expected MgmtTree root, found {root.tag!r}")
    device_id = root.get("device-id")
    if not device_id:
        raise SchemaViolation("MgmtTree is missing device-id")
    nodes = [child for child in root if child.tag == "Node"]
    if len(nodes) != 1:
        raise SchemaViolation("MgmtTree must hold exactly one root Node")
    root_node = _parse_node(nodes[0], path=".")
    if root_node.children is None:
        raise SchemaViolation("root node must be interior")
    if root_node.permanence != PERMANENT:
        raise SchemaViolation("root node must be permanent")
    if root_node.properties.name != ".":
        raise SchemaViolation("root node must be named '.'")
    return ManagementTree(device_id, root=root_node)


def _parse_node(elem: ET.Element, path: str) -> TreeNode:
    name = elem.get("name")
    if not name:
        raise SchemaViolation(f"Node at {path} is missing a name")
    permanence = elem.get("permanence")
    if permanence not in (PERMANENT, DYNAMIC):
        raise SchemaViolation(f"bad permanence {permanence!r} at {path}")
    if elem.text and elem.text.strip():
        raise SchemaViolation(f"stray text inside Node at {path}")

    props_elem = None
    acl_elem = None
    value_elem = None
    child_elems: list[ET.Element] = []
    for child in elem:
        if child.tag not in _NODE_CHILD_TAGS:
            raise SchemaViolation(f"unexpected element {child.tag!r} at {path}")
        if child.tail and child.tail.strip():
            raise SchemaViolation(f"stray text inside Node at {path}")
        if child.tag == "Node":
            child_elems.append(child)
        elif child.tag == "Props":
            if props_elem is not None:
                raise SchemaViolation(f"duplicate Props at {path}")
            props_elem = child
        elif child.tag == "ACL":
            acl_elem = child
        else:
            value_elem = child
    if props_elem is None:
        raise SchemaViolation(f"Node at {path} is missing Props")

    attrs = {}
    for key in ("format", "type", "title", "verno", "tstamp", "size"):
        val = props_elem.get(key)
        if val is None:
            raise SchemaViolation(f"Props at {path} is missing {key!r}")
        attrs[key] = val
    try:
        verno = int(attrs["verno"])
        size = int(attrs["size"])
    except ValueError as exc:
        raise SchemaViolation(f"non-numeric property at {path}: {exc}") from None
    if verno < 0 or size < 0:
        raise SchemaViolation(f"negative property at {path}")

    try:
        acl = Acl.from_string(acl_elem.text or "") if acl_elem is not None else Acl()
    except SchemaViolation as exc:
        raise SchemaViolation(f"bad ACL at {path}: {exc}") from None

    fmt = attrs["format"]
    is_interior = fmt == FORMAT_NODE
    if is_interior and value_elem is not None:
        raise SchemaViolation(f"interior node at {path} declares a Value")
    if not is_interior and child_elems:
        raise SchemaViolation(f"leaf at {path} has child nodes")

    value = b""
    if value_elem is not None:
        text = value_elem.text or ""
        if fmt == "bin":
            try:
                value = base64.b64decode(text.strip(), validate=True)
            except Exception as exc:
                raise SchemaViolation(f"bad base64 Value at {path}: {exc}") from None
        else:
            value = text.encode("utf-8")
    if not is_interior and size != len(value):
        raise SchemaViolation(f"size {size} does not match value length at {path}")
    if is_interior and size != 0:
        raise SchemaViolation(f"interior node at {path} declares a size")

    properties = NodeProperties(
        acl=acl, format=fmt, name=name, size=size, title=attrs["title"],
        tstamp=attrs["tstamp"], type=attrs["type"], verno=verno,
    )
    node = TreeNode(properties=properties, permanence=permanence,
                    children={} if is_interior else None,
                    value=None if is_interior else value)
    for child_elem in child_elems:
        child_name = child_elem.get("name") or ""
        child_path = f"{path}/{child_name}" if path != "." else f"./{child_name}"
        child = _parse_node(child_elem, path=child_path)
        assert node.children is not None
        if child.properties.name in node.children:
            raise SchemaViolation(f"duplicate child {child.properties.name!r} at {path}")
        node.children[child.properties.name] = child
    return node
