"""Error hierarchy shared by every service and the wire protocol.

Each error carries a stable numeric ``code`` so that it survives the trip
through an ERROR frame and is re-raised as the same class on the caller side.
"""


class BlobError(Exception):
    code = 1
    name = "ERROR"


class NotFound(BlobError):
    code = 2
    name = "NOT_FOUND"


class Conflict(BlobError):
    code = 3
    name = "CONFLICT"


class Timeout(BlobError):
    code = 4
    name = "TIMEOUT"


class StoreFull(BlobError):
    code = 5
    name = "STORE_FULL"


class BadRange(BlobError):
    code = 6
    name = "RANGE"


class NoProviders(BlobError):
    code = 7
    name = "NO_PROVIDERS"


class UnknownProvider(BlobError):
    code = 8
    name = "UNKNOWN_PROVIDER"


class UnknownBlob(BlobError):
    code = 9
    name = "UNKNOWN_BLOB"


class UnknownVersion(BlobError):
    code = 10
    name = "UNKNOWN_VERSION"


class NotPublished(BlobError):
    code = 11
    name = "NOT_PUBLISHED"


class OffsetBeyondEnd(BlobError):
    code = 12
    name = "OFFSET_BEYOND_END"


class OutOfBounds(BlobError):
    code = 13
    name = "OUT_OF_BOUNDS"


class BadPsize(BlobError):
    code = 14
    name = "BAD_PSIZE"


class Malformed(BlobError):
    code = 15
    name = "MALFORMED"


class ConnectionFailed(BlobError):
    code = 16
    name = "CONNECTION"


class UnknownOpcode(Malformed):
    code = 17
    name = "UNKNOWN_OPCODE"


class CheckFailed(BlobError):
    """Raised by the validation harness; ``trace`` holds the reproducing ops."""

    code = 18
    name = "CHECK_FAILED"

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


BY_CODE = {
    cls.code: cls
    for cls in (
        BlobError,
        NotFound,
        Conflict,
        Timeout,
        StoreFull,
        BadRange,
        NoProviders,
        UnknownProvider,
        UnknownBlob,
        UnknownVersion,
        NotPublished,
        OffsetBeyondEnd,
        OutOfBounds,
        BadPsize,
        Malformed,
        ConnectionFailed,
        UnknownOpcode,
        CheckFailed,
    )
}


def from_code(code: int, message: str) -> BlobError:
    return BY_CODE.get(code, BlobError)(message)
