from __future__ import annotations

import pytest

from scm_forge import tree_xml
from scm_forge.errors import SchemaViolation, UnknownDevice
from scm_forge.fleet import (
    PayloadRepository,
    StepClock,
    descriptor_for,
    fleet_spawn,
    repo_descriptor_document,
)
from scm_forge.scm import AppDescriptor
from scm_forge.uri import NodeUri


def test_spawn_is_reproducible():
    first = fleet_spawn(10, seed=7)
    second = fleet_spawn(10, seed=7)
    assert first.device_ids() == second.device_ids()
    for device_id in first.device_ids():
        assert (tree_xml.save(first.device(device_id).tree)
                == tree_xml.save(second.device(device_id).tree))


def test_different_seeds_differ():
    a = fleet_spawn(6, seed=1)
    b = fleet_spawn(6, seed=2)
    assert any(tree_xml.save(a.device(d).tree) != tree_xml.save(b.device(d).tree)
               for d in a.device_ids())


def test_single_device_fixture():
    fleet = fleet_spawn(1, seed=3)
    device = fleet.device("SIM-0001")
    assert device.tree.get(NodeUri.parse("./DevInfo/DevId")).value == b"SIM-0001"


def test_zero_devices_rejected():
    with pytest.raises(ValueError):
        fleet_spawn(0, seed=1)


def test_unknown_device():
    fleet = fleet_spawn(1, seed=1)
    with pytest.raises(UnknownDevice):
        fleet.device("SIM-9999")


def test_step_clock_advances_per_reading():
    clock = StepClock()
    first = clock().strftime("%H:%M:%S")
    second = clock().strftime("%H:%M:%S")
    assert (first, second) == ("00:00:00", "00:00:01")
    assert clock.counter == 2


class TestRepository:
    def test_put_fetch(self):
        repo = PayloadRepository()
        uri = repo.put("app.jar", b"bytes")
        assert uri == "sim://repo/app.jar"
        assert repo.fetch(uri) == b"bytes"

    def test_unknown_uri(self):
        repo = PayloadRepository()
        with pytest.raises(SchemaViolation):
            repo.fetch("sim://repo/nope.jar")
        with pytest.raises(SchemaViolation):
            repo.fetch("http://elsewhere/x")

    def test_directory_backing(self, tmp_path):
        (tmp_path / "game.jar").write_bytes(b"GAME")
        repo = PayloadRepository(root=tmp_path)
        assert repo.fetch("sim://repo/game.jar") == b"GAME"

    def test_descriptor_documents(self):
        repo = PayloadRepository()
        descriptor = descriptor_for("game", "Game", "2.0", b"GAME",
                                    source_uri="sim://repo/game.jar")
        repo.put("game.json", repo_descriptor_document(descriptor))
        loaded = repo.load_descriptor("game.json")
        assert loaded == descriptor

    def test_descriptor_missing_field(self):
        with pytest.raises(SchemaViolation):
            AppDescriptor.from_json({"app_id": "x"})
