"""scm-forge: a software-component deployment simulator.

Device management over an XML message protocol: URI-addressed management
trees with ACLs, client/server sessions, an application lifecycle agent,
a simulated fleet over in-memory or TCP links, and a management server
with CLI and admin API.
"""
from .acl import Acl
from .errors import ScmForgeError
from .fleet import Fleet, PayloadRepository, SimDevice, fleet_spawn
from .scm import AppDescriptor, InventoryRow, ScmAgent
from .server import DeploymentJob, ManagementServer, compile_job, new_job
from .session import ClientSession, ServerSession, Transcript, client_open, run_session
from .transport import FaultPlan, TcpListener, link_pair, tcp_link
from .tree import GetResult, ManagementTree, build_default_tree
from .uri import NodeUri

__all__ = [
    "Acl",
    "AppDescriptor",
    "ClientSession",
    "DeploymentJob",
    "FaultPlan",
    "Fleet",
    "GetResult",
    "InventoryRow",
    "ManagementServer",
    "ManagementTree",
    "NodeUri",
    "PayloadRepository",
    "ScmAgent",
    "ScmForgeError",
    "ServerSession",
    "SimDevice",
    "TcpListener",
    "Transcript",
    "build_default_tree",
    "client_open",
    "compile_job",
    "fleet_spawn",
    "link_pair",
    "new_job",
    "run_session",
    "tcp_link",
]

__version__ = "0.1.0"
