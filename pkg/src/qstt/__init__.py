"""Time transfer from entangled-photon time-tags with OTP-protected timing data."""

from .errors import (
    AuthenticationError,
    ConfigError,
    CorruptPermutation,
    DiffOverflow,
    DriftEstimationError,
    InvalidParameter,
    LengthMismatch,
    MacFailure,
    MissingKey,
    NoLock,
    PoolExhausted,
    ProtocolError,
    QSTTError,
    ReplayDetected,
    UnreliablePeak,
    WireError,
)
from .keystore import BudgetParams, KeyPool, Pool, Route, max_q, resolve_fallback, usage_rate
from .message import SecureTimingMessage, wire_decode, wire_encode
from .protocol import decrypt_timing, encrypt_timing
from .timebase import ChannelModel, ClockModel, TimeTagArray, detect, generate_pairs

__version__ = "0.1.0"
