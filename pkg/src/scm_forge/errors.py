"""Exception types shared across the scm-forge suite."""
from __future__ import annotations


class ScmForgeError(Exception):
    """Base class for every error raised by this package."""


# --- management tree ---------------------------------------------------

class TreeError(ScmForgeError):
    """A management-tree command failed; the tree is unchanged."""


class NotFound(TreeError):
    pass


class AlreadyExists(TreeError):
    pass


class ParentIsLeaf(TreeError):
    pass


class PermanentNode(TreeError):
    pass


class PermissionDenied(TreeError):
    pass


class ImmutableProperty(TreeError):
    pass


class SourceContainsDestination(TreeError):
    pass


# --- persistence / codec ------------------------------------------------

class ParseError(ScmForgeError):
    """Malformed document. ``line``/``column`` are 1-based when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        super().__init__(message)
        self.line = line
        self.column = column


class SchemaViolation(ScmForgeError):
    pass


class UnknownCommand(ParseError):
    """A body element outside the closed DM command vocabulary."""


class InvariantViolation(ScmForgeError):
    """A message value breaks a structural invariant; names the invariant."""


# --- session protocol ----------------------------------------------------

class SessionMismatch(ScmForgeError):
    pass


class OutOfOrderMessage(ScmForgeError):
    pass


class MissingDevInfo(ScmForgeError):
    pass


# --- transport ------------------------------------------------------------

class TransportError(ScmForgeError):
    pass


class TransportClosed(TransportError):
    pass


class FrameTooLarge(TransportError):
    pass


class ConnectionRefused(TransportError):
    pass


class AddressInUse(TransportError):
    pass


# --- software component management ----------------------------------------

class OperationNotAllowed(ScmForgeError):
    """The target exists but the command is not valid against it."""


class HashMismatch(ScmForgeError):
    pass


class CapacityExceeded(ScmForgeError):
    pass


class MissingSourceUri(ScmForgeError):
    pass


# --- server service ----------------------------------------------------------

class DuplicateDevice(ScmForgeError):
    pass


class UnknownDevice(ScmForgeError):
    pass


class UnknownAction(ScmForgeError):
    pass
