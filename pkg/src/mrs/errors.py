"""Exception hierarchy shared by all subsystems.

Every error carries a stable wire code so the daemon can serialize it
without a lookup table at each call site.
"""

# Stable wire codes.
NOT_FOUND = "NOT_FOUND"
ALREADY_EXISTS = "ALREADY_EXISTS"
BAD_REQUEST = "BAD_REQUEST"
NO_LIVE_NODES = "NO_LIVE_NODES"
UNKNOWN_JOB = "UNKNOWN_JOB"
WAIT_TIMEOUT = "WAIT_TIMEOUT"
TERMINAL = "TERMINAL"


class MrsError(Exception):
    """Base class; `code` is the stable string sent over the wire."""

    code = BAD_REQUEST

    def __init__(self, message=""):
        super().__init__(message)
        self.message = message


# --- dfs ---

class NotFound(MrsError):
    code = NOT_FOUND


class AlreadyExists(MrsError):
    code = ALREADY_EXISTS


class InsufficientNodes(MrsError):
    code = NO_LIVE_NODES


class BlockUnavailable(MrsError):
    code = NOT_FOUND


class InvalidPath(MrsError):
    code = BAD_REQUEST


# --- cluster ---

class UnknownNode(MrsError):
    code = NOT_FOUND


class AlreadyDead(MrsError):
    code = BAD_REQUEST


# --- streaming ---

class IllegalByte(MrsError):
    code = BAD_REQUEST


class SpawnFailed(MrsError):
    code = BAD_REQUEST


class DuplicateName(MrsError):
    code = ALREADY_EXISTS


class SourceMissing(MrsError):
    code = NOT_FOUND


# --- jobd ---

class InputNotFound(MrsError):
    code = NOT_FOUND


class OutputExists(MrsError):
    code = ALREADY_EXISTS


class BadInputFormat(MrsError):
    code = BAD_REQUEST


class NoLiveNodes(MrsError):
    code = NO_LIVE_NODES


class UnknownJob(MrsError):
    code = UNKNOWN_JOB


class WaitTimeout(MrsError):
    code = WAIT_TIMEOUT


class AlreadyTerminal(MrsError):
    code = TERMINAL


class BadRequest(MrsError):
    code = BAD_REQUEST


#: Wire code -> exception class raised client-side when a reply reports it.
CODE_TO_ERROR = {
    NOT_FOUND: NotFound,
    ALREADY_EXISTS: AlreadyExists,
    BAD_REQUEST: BadRequest,
    NO_LIVE_NODES: NoLiveNodes,
    UNKNOWN_JOB: UnknownJob,
    WAIT_TIMEOUT: WaitTimeout,
    TERMINAL: AlreadyTerminal,
}
