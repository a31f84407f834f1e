"""Oracle equivalence: the tree against the brute-force flat-map model."""
from __future__ import annotations

import pytest

from scm_forge.fleet import StepClock
from scm_forge.tree import build_default_tree
from scm_forge import tree_xml

from flat_oracle import seed_default_model
from oracle_harness import apply_to_both, run_equivalence_sequence


def test_seeded_fixture_serializations_agree():
    tree = build_default_tree("SIM-0001", clock=StepClock())
    model = seed_default_model("SIM-0001", StepClock())
    assert tree_xml.save(tree) == model.serialize()


def test_single_commands_agree():
    tree = build_default_tree("SIM-0001", clock=StepClock())
    model = seed_default_model("SIM-0001", StepClock())
    script = [
        {"op": "add", "uri": "./SCM/Download/x", "kind": "interior", "value": b"",
         "fmt": None, "acl": {"Delete": frozenset({"srvA"})}, "requester": "srvA"},
        {"op": "add", "uri": "./SCM/Download/x/v", "kind": "leaf", "value": b"hi",
         "fmt": "chr", "acl": None, "requester": "srvB"},
        {"op": "get", "uri": "./SCM/Download/x", "requester": "srvB"},
        {"op": "replace", "uri": "./SCM/Download/x/v", "value": b"ho",
         "props": None, "requester": "srvA"},
        {"op": "delete", "uri": "./SCM/Download/x", "requester": "srvB"},
        {"op": "delete", "uri": "./SCM/Download/x", "requester": "srvA"},
        {"op": "copy", "src": "./DevInfo", "dst": "./SCM/Download/copy",
         "requester": "srvA"},
        {"op": "get", "uri": "./SCM/Download/copy", "requester": None},
        {"op": "delete", "uri": "./DevInfo", "requester": "srvA"},
    ]
    for cmd in script:
        apply_to_both(tree, model, cmd)
    assert tree_xml.save(tree) == model.serialize()


@pytest.mark.parametrize("seed", range(25))
def test_random_sequences_agree(seed):
    run_equivalence_sequence(seed, length=120)
