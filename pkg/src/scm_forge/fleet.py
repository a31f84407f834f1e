"""Simulated device fleet and the payload repository behind sim:// URIs.

Devices run deterministic step clocks (fixed epoch, one tick per reading)
so that two fleets spawned with the same arguments serialize their trees
and transcripts identically.
"""
from __future__ import annotations

import json
import random
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

from .errors import SchemaViolation, UnknownDevice
from .scm import DEFAULT_CAPACITY, AppDescriptor, ScmAgent
from .session import PlainCredentials
from .transport import TransportLink
from .tree import ManagementTree, build_default_tree

SIM_EPOCH = datetime(2026, 1, 1, tzinfo=timezone.utc)

_MODELS = ("SW-100", "SW-200", "SW-320", "SW-500")
_FIRMWARES = ("fw-1.0.4", "fw-1.1.0", "fw-1.2.3", "fw-2.0.1")


@dataclass
class StepClock:
    """Advances one second per reading, starting at a fixed epoch."""

    start: datetime = SIM_EPOCH
    counter: int = 0

    def __call__(self) -> datetime:
        value = self.start + timedelta(seconds=self.counter)
        self.counter += 1
        return value


class PayloadRepository:
    """Payload store addressed as sim://repo/<filename>.

    Backed by an optional directory; entries put() at runtime live in
    memory on top of it. Files named *.json parse as app descriptors.
    """

    SCHEME = "sim://repo/"

    def __init__(self, root: Path | str | None = None):
        self.root = Path(root) if root is not None else None
        self._memory: dict[str, bytes] = {}

    def put(self, filename: str, data: bytes) -> str:
        self._memory[filename] = data
        return self.SCHEME + filename

    def fetch(self, source_uri: str) -> bytes:
        if not source_uri.startswith(self.SCHEME):
            raise SchemaViolation(f"unsupported payload URI {source_uri!r}")
        filename = source_uri[len(self.SCHEME):]
        if filename in self._memory:
            return self._memory[filename]
        if self.root is not None:
            path = self.root / filename
            if path.is_file():
                return path.read_bytes()
        raise SchemaViolation(f"no payload at {source_uri!r}")

    def load_descriptor(self, filename: str) -> AppDescriptor:
        return AppDescriptor.from_json_bytes(self.fetch(self.SCHEME + filename))


@dataclass
class SimDevice:
    """One simulated device: tree, lifecycle agent, link endpoint."""

    device_id: str
    tree: ManagementTree
    agent: ScmAgent
    credentials: PlainCredentials
    capacity: int = DEFAULT_CAPACITY
    link: TransportLink | None = None
    session_counter: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)

    def allocate_session_id(self) -> str:
        self.session_counter += 1
        return f"{self.device_id}-s{self.session_counter}"

    def clock_state(self) -> int:
        clock = self.tree.clock
        return clock.counter if isinstance(clock, StepClock) else 0


def make_device(
    device_id: str,
    *,
    capacity: int = DEFAULT_CAPACITY,
    repository: PayloadRepository | None = None,
    devinfo: dict[str, str] | None = None,
    devdetail: dict[str, str] | None = None,
    clock: StepClock | None = None,
    password: str | None = None,
) -> SimDevice:
    clock = clock or StepClock()
    tree = build_default_tree(device_id, clock=clock, devinfo=devinfo, devdetail=devdetail)
    agent = ScmAgent(tree=tree, capacity=capacity,
                     fetch=repository.fetch if repository else None)
    return SimDevice(
        device_id=device_id, tree=tree, agent=agent, capacity=capacity,
        credentials=PlainCredentials(device_id, password or f"pw-{device_id}"),
    )


@dataclass
class Fleet:
    devices: dict[str, SimDevice]
    repository: PayloadRepository
    seed: int = 0

    def device_ids(self) -> list[str]:
        return sorted(self.devices)

    def device(self, device_id: str) -> SimDevice:
        try:
            return self.devices[device_id]
        except KeyError:
            raise UnknownDevice(device_id) from None

    def add_device(self, device: SimDevice) -> None:
        if device.device_id in self.devices:
            raise SchemaViolation(f"duplicate device {device.device_id!r}")
        self.devices[device.device_id] = device


def fleet_spawn(n: int, seed: int, *, capacity: int = DEFAULT_CAPACITY,
                repository: PayloadRepository | None = None) -> Fleet:
    """n simulated devices with ids SIM-0001..; reproducible given the seed."""
    if n < 1:
        raise ValueError("fleet size must be at least 1")
    rng = random.Random(seed)
    repository = repository or PayloadRepository()
    devices: dict[str, SimDevice] = {}
    for index in range(1, n + 1):
        device_id = f"SIM-{index:04d}"
        devices[device_id] = make_device(
            device_id,
            capacity=capacity,
            repository=repository,
            devdetail={
                "FwV": rng.choice(_FIRMWARES),
                "HwV": f"hw-{rng.randint(1, 4)}.{rng.randint(0, 9)}",
            },
            devinfo={"Mod": rng.choice(_MODELS)},
        )
    return Fleet(devices=devices, repository=repository, seed=seed)


def descriptor_for(app_id: str, name: str, version: str, payload: bytes,
                   vendor: str = "SimWorks", source_uri: str | None = None) -> AppDescriptor:
    """Descriptor whose size and digest match the given payload."""
    return AppDescriptor.for_payload(app_id, name, version, vendor, payload,
                                     source_uri=source_uri)


def repo_descriptor_document(descriptor: AppDescriptor) -> bytes:
    return json.dumps(descriptor.to_json(), indent=2).encode("utf-8")
