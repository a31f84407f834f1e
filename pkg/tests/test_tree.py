from __future__ import annotations

import pytest

from scm_forge import tree_xml
from scm_forge.acl import Acl
from scm_forge.errors import (
    AlreadyExists,
    ImmutableProperty,
    NotFound,
    ParentIsLeaf,
    PermanentNode,
    PermissionDenied,
    SchemaViolation,
    SourceContainsDestination,
)
from scm_forge.uri import NodeUri

U = NodeUri.parse


def unchanged_by(tree, exc_type, op):
    """Assert the op raises and leaves the serialized tree byte-identical."""
    before = tree_xml.save(tree)
    with pytest.raises(exc_type):
        op()
    assert tree_xml.save(tree) == before


class TestGet:
    def test_interior_returns_sorted_child_names(self, tree):
        result = tree.get(U("./DevInfo"), "srvA")
        assert result.is_interior
        assert result.child_names == ["DevId", "DmV", "Lang", "Man", "Mod"]

    def test_leaf_returns_value_and_meta(self, tree):
        result = tree.get(U("./DevInfo/DevId"), "srvA")
        assert not result.is_interior
        assert result.value == b"SIM-0001"
        assert result.format == "chr"
        assert result.mime_type == "text/plain"
        assert result.size == len(b"SIM-0001")

    def test_missing_node(self, tree):
        with pytest.raises(NotFound):
            tree.get(U("./NoSuch"), "srvA")

    def test_get_does_not_touch_verno(self, tree):
        before = tree_xml.save(tree)
        tree.get(U("./DevInfo"), "srvA")
        assert tree_xml.save(tree) == before


class TestAdd:
    def test_add_leaf(self, tree):
        tree.add(U("./SCM/Inventory/Delivered/app1"), "srvA", kind="interior")
        tree.add(U("./SCM/Inventory/Delivered/app1/Name"), "srvA",
                 value=b"Mailer", mime="text/plain")
        got = tree.get(U("./SCM/Inventory/Delivered/app1/Name"), "srvA")
        assert got.value == b"Mailer"
        node = tree.find(U("./SCM/Inventory/Delivered/app1/Name"))
        assert node.properties.verno == 0
        assert node.permanence == "dynamic"

    def test_parent_verno_incremented(self, tree):
        parent = tree.find(U("./SCM/Download"))
        assert parent.properties.verno == 0
        tree.add(U("./SCM/Download/game"), "srvA", kind="interior")
        assert parent.properties.verno == 1

    def test_add_under_leaf(self, tree):
        unchanged_by(tree, ParentIsLeaf,
                     lambda: tree.add(U("./DevInfo/DevId/x"), "srvA", value=b"1"))

    def test_add_existing(self, tree):
        unchanged_by(tree, AlreadyExists,
                     lambda: tree.add(U("./DevInfo"), "srvA", kind="interior"))

    def test_add_missing_parent(self, tree):
        unchanged_by(tree, NotFound,
                     lambda: tree.add(U("./Nope/child"), "srvA", value=b"1"))

    def test_add_at_root(self, tree):
        with pytest.raises(AlreadyExists):
            tree.add(NodeUri(), "srvA", kind="interior")


class TestReplace:
    def test_value_replace_bumps_verno(self, tree):
        uri = U("./DevDetail/SwV")
        tree.replace(uri, "srvA", value=b"1.0")
        verno = tree.find(uri).properties.verno
        tree.replace(uri, "srvA", value=b"1.1")
        node = tree.find(uri)
        assert node.value == b"1.1"
        assert node.properties.verno == verno + 1
        assert node.properties.size == 3

    def test_identical_value_still_bumps(self, tree):
        uri = U("./DevDetail/SwV")
        verno = tree.find(uri).properties.verno
        tree.replace(uri, "srvA", value=tree.find(uri).value)
        assert tree.find(uri).properties.verno == verno + 1

    def test_replace_derived_property(self, tree):
        unchanged_by(tree, ImmutableProperty,
                     lambda: tree.replace(U("./DevDetail/SwV"), "srvA",
                                          props={"verno": 7}))

    def test_replace_name_or_permanence(self, tree):
        for key in ("name", "permanence", "tstamp", "size"):
            unchanged_by(tree, ImmutableProperty,
                         lambda k=key: tree.replace(U("./DevDetail/SwV"), "srvA",
                                                    props={k: "x"}))

    def test_replace_title_type_acl(self, tree):
        uri = U("./DevDetail/SwV")
        acl = Acl.of(Replace={"srvA"})
        tree.replace(uri, "srvA", props={"title": "software version",
                                         "type": "text/x-version", "acl": acl})
        props = tree.find(uri).properties
        assert props.title == "software version"
        assert props.type == "text/x-version"
        assert props.acl == acl

    def test_replace_value_on_interior(self, tree):
        unchanged_by(tree, ImmutableProperty,
                     lambda: tree.replace(U("./DevInfo"), "srvA", value=b"zz"))

    def test_replace_missing(self, tree):
        with pytest.raises(NotFound):
            tree.replace(U("./NoSuch"), "srvA", value=b"1")

    def test_replace_nothing_given(self, tree):
        with pytest.raises(SchemaViolation):
            tree.replace(U("./DevDetail/SwV"), "srvA")

    def test_replace_leaf_format(self, tree):
        uri = U("./DevDetail/SwV")
        tree.replace(uri, "srvA", props={"format": "xml"})
        assert tree.find(uri).properties.format == "xml"
        unchanged_by(tree, ImmutableProperty,
                     lambda: tree.replace(uri, "srvA", props={"format": "node"}))


class TestDelete:
    def test_delete_removes_subtree(self, tree):
        tree.add(U("./SCM/Inventory/Delivered/app1"), "srvA", kind="interior")
        tree.add(U("./SCM/Inventory/Delivered/app1/Name"), "srvA", value=b"x")
        tree.delete(U("./SCM/Inventory/Delivered/app1"), "srvA")
        with pytest.raises(NotFound):
            tree.get(U("./SCM/Inventory/Delivered/app1"), "srvA")
        with pytest.raises(NotFound):
            tree.get(U("./SCM/Inventory/Delivered/app1/Name"), "srvA")

    def test_delete_permanent(self, tree):
        unchanged_by(tree, PermanentNode, lambda: tree.delete(U("./DevInfo"), "srvA"))

    def test_delete_root(self, tree):
        unchanged_by(tree, PermanentNode, lambda: tree.delete(NodeUri(), "srvA"))

    def test_delete_without_grant(self, tree):
        tree.add(U("./SCM/Download/x"), "srvA", kind="interior",
                 acl=Acl.of(Delete={"srvA"}))
        unchanged_by(tree, PermissionDenied,
                     lambda: tree.delete(U("./SCM/Download/x"), "srvB"))

    def test_delete_missing(self, tree):
        with pytest.raises(NotFound):
            tree.delete(U("./NoSuch"), "srvA")


class TestCopy:
    def test_copy_leaf_preserves_value(self, tree):
        tree.copy(U("./DevInfo/Man"), U("./SCM/Download/ManCopy"), "srvA")
        assert (tree.get(U("./SCM/Download/ManCopy"), "srvA").value
                == tree.get(U("./DevInfo/Man"), "srvA").value)

    def test_copy_interior_keeps_children(self, tree):
        src = U("./SCM/Download/pack")
        tree.add(src, "srvA", kind="interior")
        for name in ("a", "b", "c"):
            tree.add(src.child(name), "srvA", value=name.encode())
        tree.copy(src, U("./SCM/Download/pack2"), "srvA")
        assert tree.get(U("./SCM/Download/pack2"), "srvA").child_names == ["a", "b", "c"]

    def test_copy_into_own_subtree(self, tree):
        tree.add(U("./SCM/Download/X"), "srvA", kind="interior")
        unchanged_by(tree, SourceContainsDestination,
                     lambda: tree.copy(U("./SCM/Download/X"),
                                       U("./SCM/Download/X/Y"), "srvA"))

    def test_copies_are_dynamic_with_fresh_verno(self, tree):
        tree.replace(U("./DevInfo/Man"), "srvA", value=b"NewCo")
        tree.copy(U("./DevInfo/Man"), U("./SCM/Download/ManCopy"), "srvA")
        node = tree.find(U("./SCM/Download/ManCopy"))
        assert node.permanence == "dynamic"
        assert node.properties.verno == 0
        assert node.properties.name == "ManCopy"

    def test_copy_of_permanent_source_is_dynamic(self, tree):
        tree.copy(U("./DevInfo"), U("./SCM/Download/InfoCopy"), "srvA")
        copied = tree.find(U("./SCM/Download/InfoCopy"))
        assert copied.permanence == "dynamic"
        tree.delete(U("./SCM/Download/InfoCopy"), "srvA")

    def test_copy_to_existing(self, tree):
        unchanged_by(tree, AlreadyExists,
                     lambda: tree.copy(U("./DevInfo"), U("./DevDetail"), "srvA"))


class TestAclCheck:
    def test_wildcard(self, tree):
        assert tree.acl_check(U("./DevInfo"), "Get", "whoever")

    def test_inherited_from_ancestor(self, tree):
        tree.add(U("./SCM/Download/box"), "srvA", kind="interior",
                 acl=Acl.of(Delete={"srvA"}))
        tree.add(U("./SCM/Download/box/item"), "srvA", value=b"1")
        assert tree.acl_check(U("./SCM/Download/box/item"), "Delete", "srvA")
        assert not tree.acl_check(U("./SCM/Download/box/item"), "Delete", "srvB")

    def test_empty_grant_shadows_ancestors(self, tree):
        tree.add(U("./SCM/Download/sealed"), "srvA", kind="interior",
                 acl=Acl.of(Exec=set()))
        assert not tree.acl_check(U("./SCM/Download/sealed"), "Exec", "srvA")
        assert not tree.acl_check(U("./SCM/Download/sealed"), "Exec", "anyone")
        # Other kinds still inherit from the root.
        assert tree.acl_check(U("./SCM/Download/sealed"), "Get", "anyone")

    def test_missing_node_is_false(self, tree):
        assert not tree.acl_check(U("./NoSuch"), "Get", "srvA")

    def test_unknown_kind_is_false(self, tree):
        assert not tree.acl_check(U("./DevInfo"), "Frobnicate", "srvA")

    def test_local_requester_bypasses_acl(self, tree):
        tree.add(U("./SCM/Download/sealed"), None, kind="interior",
                 acl=Acl.of(Get=set(), Add=set(), Delete=set()))
        tree.add(U("./SCM/Download/sealed/inner"), None, value=b"1")
        tree.delete(U("./SCM/Download/sealed"), None)


class TestInvariants:
    def test_uri_bijection(self, tree):
        tree.add(U("./SCM/Download/a"), "srvA", kind="interior")
        tree.add(U("./SCM/Download/a/b"), "srvA", value=b"1")
        uris = tree.uris()
        rendered = [u.render() for u in uris]
        assert len(rendered) == len(set(rendered))
        for uri in uris:
            tree.get(uri, None)

    def test_permanent_standard_objects_survive(self, tree):
        for uri in ("./DevInfo", "./DevDetail", "./DMAcc"):
            with pytest.raises(PermanentNode):
                tree.delete(U(uri), "srvA")
            with pytest.raises(PermanentNode):
                tree.delete(U(uri), None)

    def test_verno_never_decreases(self, tree):
        uri = U("./DevDetail/FwV")
        seen = [tree.find(uri).properties.verno]
        for value in (b"a", b"b", b"c"):
            tree.replace(uri, "srvA", value=value)
            seen.append(tree.find(uri).properties.verno)
        assert seen == sorted(seen)
        assert seen[-1] == seen[0] + 3
