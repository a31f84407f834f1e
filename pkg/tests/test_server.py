from __future__ import annotations

import pytest

from scm_forge import tree_xml
from scm_forge.codec import Add, Exec, Get, Replace
from scm_forge.errors import DuplicateDevice, SchemaViolation, UnknownAction
from scm_forge.fleet import descriptor_for, fleet_spawn, make_device
from scm_forge.server import (
    DeploymentJob,
    ManagementServer,
    compile_job,
    new_job,
)

PAYLOAD = b"MAIL-PAYLOAD" * 50
PAYLOAD_V2 = b"MAIL-PAYLOAD-2" * 50


def mail_descriptor(version="1.0", payload=PAYLOAD):
    return descriptor_for("mail", "Mailer", version, payload)


@pytest.fixture
def server():
    return ManagementServer(fleet_spawn(3, seed=5))


class TestRegistry:
    def test_register_then_list(self, server):
        assert [r.device_id for r in server.list_devices()] \
            == ["SIM-0001", "SIM-0002", "SIM-0003"]

    def test_duplicate_rejected(self, server):
        with pytest.raises(DuplicateDevice):
            server.register_device(make_device("SIM-0001"))

    def test_empty_registry(self):
        assert ManagementServer().list_devices() == []

    def test_register_new_device(self, server):
        server.register_device(make_device("SIM-0100"))
        assert "SIM-0100" in [r.device_id for r in server.list_devices()]


class TestCompileJob:
    def test_install_is_one_exec(self):
        job = new_job("install", ["SIM-0001"], app_id="mail")
        batch = compile_job(job, "SIM-0001")
        assert len(batch) == 1
        assert isinstance(batch[0], Exec)
        assert batch[0].item.target_uri.render() \
            == "./SCM/Inventory/Delivered/mail/Operations/Install"

    def test_inventory_is_two_gets(self):
        job = new_job("inventory", ["SIM-0001"])
        batch = compile_job(job, "SIM-0001")
        assert [type(c) for c in batch] == [Get, Get]
        assert [c.items[0].target_uri.render() for c in batch] \
            == ["./SCM/Inventory", "./SCM/Download"]

    def test_deliver_add_count_matches_layout(self):
        job = new_job("deliver", ["SIM-0001"], descriptor=mail_descriptor(),
                      payload=PAYLOAD)
        batch = compile_job(job, "SIM-0001")
        assert all(isinstance(c, Add) for c in batch)
        # app node + 9 descriptor/Data leaves + Operations + 3 operation leaves
        assert len(batch) == 14

    def test_register_download_count(self):
        descriptor = descriptor_for("game", "Game", "1.0", b"G",
                                    source_uri="sim://repo/game.jar")
        job = new_job("register_download", ["SIM-0001"], descriptor=descriptor)
        batch = compile_job(job, "SIM-0001")
        # app node + 9 descriptor leaves (incl. SourceURI) + Operations + Start
        assert len(batch) == 12
        assert batch[-1].items[0].target_uri.render() \
            == "./SCM/Download/game/Operations/Start"

    def test_update_is_replaces(self):
        job = new_job("update", ["SIM-0001"], app_id="mail",
                      descriptor=mail_descriptor("1.1", PAYLOAD_V2),
                      payload=PAYLOAD_V2)
        batch = compile_job(job, "SIM-0001")
        assert all(isinstance(c, Replace) for c in batch)
        leaves = [c.items[0].target_uri.name for c in batch]
        assert leaves == ["Name", "Version", "Vendor", "Type", "Size", "Hash", "Data"]

    def test_compile_is_pure(self):
        job = new_job("deliver", ["SIM-0001", "SIM-0002"],
                      descriptor=mail_descriptor(), payload=PAYLOAD)
        assert compile_job(job, "SIM-0001") == compile_job(job, "SIM-0002")
        assert compile_job(job, "SIM-0001") == compile_job(job, "SIM-0001")

    def test_unknown_action(self):
        with pytest.raises(UnknownAction):
            DeploymentJob(job_id="j", action="explode", targets=["SIM-0001"])

    def test_remove_honors_container_hint(self):
        deployed = compile_job(new_job("remove", ["d"], app_id="mail"), "d")
        delivered = compile_job(new_job("remove", ["d"], app_id="mail",
                                        container_hint="delivered"), "d")
        assert deployed[0].item.target_uri.render() \
            == "./SCM/Inventory/Deployed/mail/Operations/Remove"
        assert delivered[0].item.target_uri.render() \
            == "./SCM/Inventory/Delivered/mail/Operations/Remove"


class TestRunJob:
    def test_pipeline_across_fleet(self, server):
        targets = [r.device_id for r in server.list_devices()]
        deliver = server.run_job(new_job("deliver", targets,
                                         descriptor=mail_descriptor(),
                                         payload=PAYLOAD))
        assert all(s.state == "done" and s.code == 200
                   for s in deliver.target_status.values())
        install = server.run_job(new_job("install", targets, app_id="mail"))
        assert all(s.code == 200 for s in install.target_status.values())
        activate = server.run_job(new_job("activate", targets, app_id="mail"))
        assert all(s.code == 200 for s in activate.target_status.values())
        inventory = server.run_job(new_job("inventory", targets))
        assert all(s.code == 200 for s in inventory.target_status.values())
        for record in server.list_devices():
            assert record.cached_inventory == [
                {"app_id": "mail", "name": "Mailer", "version": "1.0",
                 "state": "active", "origin": "dmserver"}]
            assert record.cached_devinfo["DevId"] == record.device_id
            assert record.inventory_session
            local = [row.to_json() for row
                     in server.fleet.device(record.device_id).agent.inventory()]
            assert local == record.cached_inventory

    def test_unregistered_target_isolated(self, server):
        job = server.run_job(new_job("inventory", ["SIM-0001", "SIM-9999"]))
        assert job.target_status["SIM-0001"].state == "done"
        failed = job.target_status["SIM-9999"]
        assert failed.state == "failed" and "UnknownDevice" in failed.reason

    def test_activate_without_delivery_reports_code(self, server):
        job = server.run_job(new_job("activate", ["SIM-0001"], app_id="mail"))
        assert job.target_status["SIM-0001"].state == "done"
        assert job.target_status["SIM-0001"].code == 404

    def test_activate_on_delivered_app_is_405(self, server):
        server.run_job(new_job("deliver", ["SIM-0001"],
                               descriptor=mail_descriptor(), payload=PAYLOAD))
        # App is delivered, not installed; Activate's operation node exists
        # only under Deployed, so hint at the Delivered container instead.
        job = server.run_job(new_job("install", ["SIM-0001"], app_id="mail"))
        assert job.target_status["SIM-0001"].code == 200
        job = server.run_job(new_job("install", ["SIM-0001"], app_id="mail"))
        assert job.target_status["SIM-0001"].code == 404
        job = server.run_job(new_job("deactivate", ["SIM-0001"], app_id="mail"))
        assert job.target_status["SIM-0001"].code == 405

    def test_start_download_reports_202(self, server):
        payload = b"GAME" * 30
        source = server.fleet.repository.put("game.jar", payload)
        descriptor = descriptor_for("game", "Game", "1.0", payload,
                                    source_uri=source)
        reg = server.run_job(new_job("register_download", ["SIM-0001"],
                                     descriptor=descriptor))
        assert reg.target_status["SIM-0001"].code == 200
        start = server.run_job(new_job("start_download", ["SIM-0001"],
                                       app_id="game"))
        assert start.target_status["SIM-0001"].code == 202
        inventory = server.run_job(new_job("inventory", ["SIM-0001"]))
        assert inventory.target_status["SIM-0001"].code == 200
        assert server.registry["SIM-0001"].cached_inventory == [
            {"app_id": "game", "name": "Game", "version": "1.0",
             "state": "delivered", "origin": "download"}]

    def test_get_node_round(self, server):
        job = server.run_job(new_job("get_node", ["SIM-0002"],
                                     node_uri="./DevDetail/SwV"))
        assert job.target_status["SIM-0002"].code == 200


class TestTcpTransport:
    def test_pipeline_over_loopback(self):
        server = ManagementServer(fleet_spawn(2, seed=9), transport="tcp",
                                  deadline_ms=5000)
        targets = ["SIM-0001", "SIM-0002"]
        job = server.run_job(new_job("deliver", targets,
                                     descriptor=mail_descriptor(),
                                     payload=PAYLOAD))
        assert all(s.code == 200 for s in job.target_status.values())
        for target in targets:
            assert server.fleet.device(target).agent.app_state("mail") == "delivered"


class TestPersistence:
    def test_roundtrip(self, tmp_path, server):
        targets = [r.device_id for r in server.list_devices()]
        server.run_job(new_job("deliver", targets, descriptor=mail_descriptor(),
                               payload=PAYLOAD))
        server.run_job(new_job("inventory", targets))
        server.persist_state(tmp_path)

        restored = ManagementServer.restore_state(tmp_path)
        assert [r.to_json() for r in restored.list_devices()] \
            == [r.to_json() for r in server.list_devices()]
        assert sorted(restored.jobs) == sorted(server.jobs)
        for job_id, job in server.jobs.items():
            assert restored.jobs[job_id].to_json() == job.to_json()
        for target in targets:
            assert (tree_xml.save(restored.fleet.device(target).tree)
                    == tree_xml.save(server.fleet.device(target).tree))
        for session_id, transcript in server.transcripts.items():
            assert (restored.transcripts[session_id].to_json_lines()
                    == transcript.to_json_lines())

    def test_restore_from_empty_dir(self, tmp_path):
        restored = ManagementServer.restore_state(tmp_path)
        assert restored.list_devices() == []

    def test_corrupted_snapshot_names_file(self, tmp_path, server):
        server.persist_state(tmp_path)
        victim = tmp_path / "trees" / "SIM-0002.xml"
        victim.write_bytes(b"<MgmtTree devi")
        with pytest.raises(SchemaViolation, match="SIM-0002.xml"):
            ManagementServer.restore_state(tmp_path)

    def test_sessions_persisted_as_they_complete(self, tmp_path):
        server = ManagementServer(fleet_spawn(1, seed=2), state_dir=tmp_path)
        server.run_job(new_job("inventory", ["SIM-0001"]))
        files = list((tmp_path / "sessions").glob("*.jsonl"))
        assert len(files) == 1
        assert (tmp_path / "trees" / "SIM-0001.xml").exists()
