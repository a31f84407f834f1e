from __future__ import annotations

import pytest

from scm_forge.fleet import PayloadRepository, StepClock, make_device
from scm_forge.tree import build_default_tree


@pytest.fixture
def clock():
    return StepClock()


@pytest.fixture
def tree(clock):
    return build_default_tree("SIM-0001", clock=clock)


@pytest.fixture
def repository():
    return PayloadRepository()


@pytest.fixture
def device(repository):
    return make_device("SIM-0001", repository=repository, clock=StepClock())
