"""Bit strings as ``str`` of '0'/'1', most-significant bit first.

Lengths in this package are small (tens of kilobits per session), so the
string form keeps every layout readable and exact.
"""

import numpy as np

from .errors import LengthMismatch


def int_to_bits(value, width):
    """Fixed-width big-endian field; negative values use two's complement."""
    if width == 0:
        return ""
    if value < 0:
        value += 1 << width
    if not 0 <= value < (1 << width):
        raise ValueError(f"{value} does not fit in {width} bits")
    return format(value, f"0{width}b")


def bits_to_int(bits, signed=False):
    if not bits:
        return 0
    value = int(bits, 2)
    if signed and bits[0] == "1":
        value -= 1 << len(bits)
    return value


def xor_bits(a, b):
    if len(a) != len(b):
        raise LengthMismatch(f"xor of {len(a)}-bit and {len(b)}-bit strings")
    if not a:
        return ""
    return format(int(a, 2) ^ int(b, 2), f"0{len(a)}b")


def bits_to_bytes(bits):
    """Pack into ceil(len/8) bytes, zero-padding the final byte on the right."""
    nbytes = (len(bits) + 7) // 8
    if nbytes == 0:
        return b""
    padded = bits + "0" * (8 * nbytes - len(bits))
    return int(padded, 2).to_bytes(nbytes, "big")


def bytes_to_bits(data, nbits=None):
    if nbits is None:
        nbits = 8 * len(data)
    if nbits > 8 * len(data):
        raise LengthMismatch(f"{len(data)} bytes cannot hold {nbits} bits")
    if not data:
        return ""
    return format(int.from_bytes(data, "big"), f"0{8 * len(data)}b")[:nbits]


def random_bits(rng, n):
    """n uniform bits from a numpy Generator."""
    if n == 0:
        return ""
    return "".join("1" if x else "0" for x in rng.integers(0, 2, size=n, dtype=np.uint8))


def is_bitstring(s):
    return isinstance(s, str) and set(s) <= {"0", "1"}
