"""Per-node access control lists.

An ACL maps a command kind to the set of server identifiers allowed to
issue it; ``*`` grants everyone. A kind that is absent from the map is
different from a kind mapped to an empty set: an absent kind defers to
the nearest ancestor that mentions it, an empty grant denies everyone
outright.

Grant strings serialize as ``Get=*&Delete=srvA+srvB`` with kinds in
command-table order and identifiers sorted, so serialization round-trips
losslessly.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import SchemaViolation

# Canonical command order, also used for grant-string output.
COMMAND_KINDS = ("Get", "Add", "Replace", "Delete", "Copy", "Exec")

WILDCARD = "*"

# Identifiers are kept to a tame alphabet so the grant string needs no escaping.
_SERVER_ID_RE = re.compile(r"^[A-Za-z0-9_.:-]+$")


def validate_server_id(server_id: str) -> str:
    if server_id != WILDCARD and not _SERVER_ID_RE.match(server_id):
        raise SchemaViolation(f"invalid server identifier {server_id!r}")
    return server_id


@dataclass(frozen=True)
class Acl:
    grants: dict[str, frozenset[str]] = field(default_factory=dict)

    def __post_init__(self):
        for kind, ids in self.grants.items():
            if kind not in COMMAND_KINDS:
                raise SchemaViolation(f"unknown command kind {kind!r} in ACL")
            for server_id in ids:
                validate_server_id(server_id)

    @classmethod
    def of(cls, **kinds: set[str] | frozenset[str] | list[str]) -> "Acl":
        """Convenience constructor: ``Acl.of(Get={"*"}, Delete={"srvA"})``."""
        return cls({kind: frozenset(ids) for kind, ids in kinds.items()})

    @classmethod
    def open_acl(cls) -> "Acl":
        """Every command granted to everyone; the root fixture default."""
        return cls({kind: frozenset({WILDCARD}) for kind in COMMAND_KINDS})

    def mentions(self, kind: str) -> bool:
        return kind in self.grants

    def allows(self, kind: str, server_id: str) -> bool:
        """Check against this ACL only; inheritance is the tree's job."""
        ids = self.grants.get(kind)
        if ids is None:
            return False
        return WILDCARD in ids or server_id in ids

    def to_string(self) -> str:
        parts = []
        for kind in COMMAND_KINDS:
            if kind in self.grants:
                parts.append(f"{kind}={'+'.join(sorted(self.grants[kind]))}")
        return "&".join(parts)

    @classmethod
    def from_string(cls, text: str) -> "Acl":
        if not text:
            return cls({})
        grants: dict[str, frozenset[str]] = {}
        for part in text.split("&"):
            kind, sep, ids_text = part.partition("=")
            if not sep or kind not in COMMAND_KINDS:
                raise SchemaViolation(f"bad ACL entry {part!r}")
            if kind in grants:
                raise SchemaViolation(f"duplicate ACL kind {kind!r}")
            ids = frozenset(i for i in ids_text.split("+") if i)
            grants[kind] = ids
        return cls(grants)
