"""Exception hierarchy shared across the package."""


class QSTTError(Exception):
    pass


class InvalidParameter(QSTTError, ValueError):
    pass


class PoolExhausted(QSTTError):
    """A key pool cannot serve a draw.

    ``fallback`` carries the route the fallback policy recommends for the
    same purpose given the current pool state.
    """

    def __init__(self, pool, purpose, requested, available, fallback):
        self.pool = pool
        self.purpose = purpose
        self.requested = requested
        self.available = available
        self.fallback = fallback
        super().__init__(
            f"{pool} pool exhausted for {purpose!r}: requested {requested} bits, "
            f"{available} available; fallback -> {fallback}"
        )


class DiffOverflow(QSTTError):
    def __init__(self, index, value, b, min_b):
        self.index = index
        self.value = value
        self.b = b
        self.min_b = min_b
        super().__init__(
            f"diff-time-tag {index} = {value} ticks does not fit in {b} bits; "
            f"minimal feasible b is {min_b}"
        )


class CorruptPermutation(QSTTError):
    pass


class LengthMismatch(QSTTError, ValueError):
    pass


class MissingKey(QSTTError):
    pass


class AuthenticationError(QSTTError):
    """Receiver refused a message before decrypting anything."""


class MacFailure(AuthenticationError):
    pass


class ReplayDetected(AuthenticationError):
    pass


class ProtocolError(QSTTError):
    pass


class WireError(QSTTError):
    BAD_MAGIC = "bad-magic"
    BAD_VERSION = "bad-version"
    TRUNCATED = "truncated"
    LENGTH_MISMATCH = "length-mismatch"

    def __init__(self, code, message):
        self.code = code
        super().__init__(f"[{code}] {message}")


class NoLock(QSTTError):
    pass


class UnreliablePeak(QSTTError):
    pass


class DriftEstimationError(QSTTError):
    pass


class ConfigError(QSTTError):
    def __init__(self, message, line=None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)
