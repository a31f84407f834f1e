"""DM status and alert codes.

The protocol uses a closed set of status codes so that exchanges stay
bit-exact across runs; anything a device cannot classify maps to 500.
"""
from __future__ import annotations

from . import errors

OK = 200
ACCEPTED = 202
UNAUTHORIZED = 401
NOT_FOUND = 404
NOT_ALLOWED = 405
UNSUPPORTED_PROPERTY = 406
ALREADY_EXISTS = 418
PERMISSION_DENIED = 425
COMMAND_FAILED = 500

LABELS = {
    OK: "OK",
    ACCEPTED: "Accepted for processing",
    UNAUTHORIZED: "Unauthorized",
    NOT_FOUND: "Not found",
    NOT_ALLOWED: "Command not allowed on target",
    UNSUPPORTED_PROPERTY: "Unsupported property",
    ALREADY_EXISTS: "Already exists",
    PERMISSION_DENIED: "Permission denied",
    COMMAND_FAILED: "Command failed",
}

SUCCESS_CODES = frozenset({OK, ACCEPTED})

# Alert codes distinguishing who opened the session.
ALERT_CLIENT_INITIATED = 1200
ALERT_SERVER_INITIATED = 1201

_ERROR_CODES = [
    (errors.NotFound, NOT_FOUND),
    (errors.PermissionDenied, PERMISSION_DENIED),
    (errors.AlreadyExists, ALREADY_EXISTS),
    (errors.ParentIsLeaf, NOT_ALLOWED),
    (errors.PermanentNode, NOT_ALLOWED),
    (errors.SourceContainsDestination, NOT_ALLOWED),
    (errors.OperationNotAllowed, NOT_ALLOWED),
    (errors.ImmutableProperty, UNSUPPORTED_PROPERTY),
    (errors.HashMismatch, COMMAND_FAILED),
    (errors.CapacityExceeded, COMMAND_FAILED),
]


def code_for_error(exc: Exception) -> int:
    """Map a command failure to its wire status code."""
    for kind, code in _ERROR_CODES:
        if isinstance(exc, kind):
            return code
    return COMMAND_FAILED


def is_success(code: int) -> bool:
    return code in SUCCESS_CODES
