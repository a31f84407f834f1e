"""Tree node addressing.

Every node is addressed by a URI rendered ``./A/B/C``; the root is ``.``.
Comparison is case-sensitive and purely structural.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import SchemaViolation


@dataclass(frozen=True)
class NodeUri:
    segments: tuple[str, ...] = ()

    def __post_init__(self):
        for seg in self.segments:
            if not seg or "/" in seg:
                raise SchemaViolation(f"invalid URI segment {seg!r}")
            if any(ord(ch) < 0x20 for ch in seg):
                raise SchemaViolation(f"control character in URI segment {seg!r}")

    @classmethod
    def parse(cls, text: str) -> "NodeUri":
        if text == ".":
            return cls(())
        if not text.startswith("./"):
            raise SchemaViolation(f"URI must start with '.': {text!r}")
        return cls(tuple(text[2:].split("/")))

    def render(self) -> str:
        if not self.segments:
            return "."
        return "./" + "/".join(self.segments)

    @property
    def name(self) -> str:
        """Final segment; the root's name is '.'."""
        return self.segments[-1] if self.segments else "."

    @property
    def is_root(self) -> bool:
        return not self.segments

    def parent(self) -> "NodeUri":
        if not self.segments:
            raise SchemaViolation("root has no parent")
        return NodeUri(self.segments[:-1])

    def child(self, name: str) -> "NodeUri":
        return NodeUri(self.segments + (name,))

    def is_prefix_of(self, other: "NodeUri") -> bool:
        """True also when the URIs are equal."""
        return other.segments[: len(self.segments)] == self.segments

    def __str__(self) -> str:
        return self.render()
