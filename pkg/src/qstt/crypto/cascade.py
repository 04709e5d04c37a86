"""One-time pad, instruction sequences and the AES/Ascon keystream cascade."""

from dataclasses import dataclass
from enum import Enum
import struct

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from ..bits import bits_to_bytes, bytes_to_bits, xor_bits
from ..errors import InvalidParameter, MissingKey
from . import ascon


def otp(data, pad):
    """Bitwise XOR of equal-length bit strings."""
    return xor_bits(data, pad)


class CipherId(str, Enum):
    AES = "AES"
    ASCON = "ASCON"

    def __str__(self):
        return self.value


AES, ASCON = CipherId.AES, CipherId.ASCON

IS_TABLE = {
    "00": (ASCON, AES),
    "01": (AES, ASCON),
    "10": (AES, ASCON, AES),
    "11": (ASCON, AES, ASCON),
}
_CODES = {steps: code for code, steps in IS_TABLE.items()}


@dataclass(frozen=True)
class InstructionSequence:
    steps: tuple

    def __post_init__(self):
        if tuple(self.steps) not in _CODES:
            raise InvalidParameter(f"{self.steps!r} is not one of the four instruction sequences")

    @property
    def code(self):
        return _CODES[tuple(self.steps)]

    def __str__(self):
        return f"{self.code} -> ({', '.join(str(s) for s in self.steps)})"


def encode_is(seq):
    return seq.code


def decode_is(bits):
    if bits not in IS_TABLE:
        raise InvalidParameter(f"instruction-sequence code must be two bits, got {bits!r}")
    return InstructionSequence(IS_TABLE[bits])


def session_nonce(session_id, domain=0):
    """Base nonce: session id | domain | step index (0) | counter (0)."""
    return struct.pack(">IIII", session_id & 0xFFFFFFFF, domain, 0, 0)


def step_nonce(nonce, step):
    return nonce[:8] + struct.pack(">I", step) + nonce[12:]


def aes_ctr_keystream(key, nonce, nbytes):
    enc = Cipher(algorithms.AES(key), modes.CTR(nonce)).encryptor()
    return enc.update(bytes(nbytes)) + enc.finalize()


def _keystream(cipher, aes_seed, ascon_seed, nonce, nbytes):
    if cipher is AES:
        if aes_seed is None:
            raise MissingKey("AES step needs a 256-bit seed from the key pool")
        if len(aes_seed) != 32:
            raise InvalidParameter("AES-256 seed must be 32 bytes")
        return aes_ctr_keystream(aes_seed, nonce, nbytes)
    if ascon_seed is None:
        raise MissingKey("Ascon step needs the 128-bit PQC seed")
    return ascon.keystream(ascon_seed, nonce, nbytes)


def _apply(data, steps, aes_seed, ascon_seed, nonce):
    if not data:
        return data
    nbytes = (len(data) + 7) // 8
    buf = bits_to_bytes(data)
    for index, cipher in steps:
        ks = _keystream(cipher, aes_seed, ascon_seed, step_nonce(nonce, index), nbytes)
        buf = (int.from_bytes(buf, "big") ^ int.from_bytes(ks, "big")).to_bytes(nbytes, "big")
    return bytes_to_bits(buf, len(data))


def cascade_encrypt(data, seq, aes_seed, ascon_seed, nonce):
    """Apply xi_1 ... xi_m in order; each step XORs its own keystream.

    Step i uses the nonce with its step field set to i, so no two steps
    share a keystream even when they run the same cipher under one key.
    """
    return _apply(data, list(enumerate(seq.steps)), aes_seed, ascon_seed, nonce)


def cascade_decrypt(data, seq, aes_seed, ascon_seed, nonce):
    return _apply(data, list(enumerate(seq.steps))[::-1], aes_seed, ascon_seed, nonce)
