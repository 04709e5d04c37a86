from .cascade import (
    AES,
    ASCON,
    IS_TABLE,
    CipherId,
    InstructionSequence,
    cascade_decrypt,
    cascade_encrypt,
    decode_is,
    encode_is,
    otp,
    session_nonce,
    step_nonce,
)
from .mac import P61, TAG_BITS, MacKeys, poly_hash, wc_mac, wc_verify

__all__ = [
    "AES",
    "ASCON",
    "IS_TABLE",
    "CipherId",
    "InstructionSequence",
    "MacKeys",
    "P61",
    "TAG_BITS",
    "cascade_decrypt",
    "cascade_encrypt",
    "decode_is",
    "encode_is",
    "otp",
    "poly_hash",
    "session_nonce",
    "step_nonce",
    "wc_mac",
    "wc_verify",
]
