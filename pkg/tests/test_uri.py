from __future__ import annotations

import pytest

from scm_forge.errors import SchemaViolation
from scm_forge.uri import NodeUri


def test_root_renders_as_dot():
    root = NodeUri()
    assert root.render() == "."
    assert root.is_root
    assert NodeUri.parse(".") == root


def test_parse_render_roundtrip():
    uri = NodeUri.parse("./SCM/Inventory/Delivered/mail")
    assert uri.segments == ("SCM", "Inventory", "Delivered", "mail")
    assert uri.render() == "./SCM/Inventory/Delivered/mail"
    assert uri.name == "mail"
    assert uri.parent().render() == "./SCM/Inventory/Delivered"


def test_equality_is_case_sensitive():
    assert NodeUri.parse("./DevInfo") != NodeUri.parse("./devinfo")
    assert NodeUri.parse("./A/B") == NodeUri(("A", "B"))


@pytest.mark.parametrize("bad", ["", "DevInfo", "./", "./a//b", ".//"])
def test_malformed_uris_rejected(bad):
    with pytest.raises(SchemaViolation):
        NodeUri.parse(bad)


def test_control_characters_rejected():
    with pytest.raises(SchemaViolation):
        NodeUri(("a\x01b",))


def test_prefix_check():
    a = NodeUri.parse("./X")
    b = NodeUri.parse("./X/Y")
    assert a.is_prefix_of(b)
    assert a.is_prefix_of(a)
    assert not b.is_prefix_of(a)
    assert NodeUri().is_prefix_of(a)


def test_child_extends():
    assert NodeUri().child("SCM").render() == "./SCM"


def test_root_has_no_parent():
    with pytest.raises(SchemaViolation):
        NodeUri().parent()
