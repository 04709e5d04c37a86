"""Wegman-Carter authentication with a polynomial hash over GF(2^61 - 1).

H_k1(m) = sum_i m_i * k1^(s - i + 1) mod p over message blocks m_1..m_s
(the last one a length block), tag = H_k1(m) XOR k2.
Blocks are 60 bits wide so every block is a distinct field element.
"""

from dataclasses import dataclass
import hmac

from ..errors import InvalidParameter

P61 = (1 << 61) - 1
TAG_BITS = 61
BLOCK_BITS = 60


@dataclass(frozen=True)
class MacKeys:
    k1: int
    k2: int

    def __post_init__(self):
        if not 0 <= self.k1 < P61:
            raise InvalidParameter("k1 must lie in [0, 2^61 - 2]")
        if not 0 <= self.k2 < (1 << TAG_BITS):
            raise InvalidParameter("k2 must be a 61-bit value")

    @classmethod
    def from_bits(cls, k1_bits, k2_bits):
        return cls(int(k1_bits, 2) % P61, int(k2_bits, 2))


def message_blocks(message):
    n = len(message)
    blocks = []
    if n:
        value = int(message, 2)
        pad = (-n) % BLOCK_BITS
        value <<= pad
        nblocks = (n + pad) // BLOCK_BITS
        mask = (1 << BLOCK_BITS) - 1
        blocks = [(value >> (BLOCK_BITS * (nblocks - 1 - i))) & mask for i in range(nblocks)]
    blocks.append(n)
    return blocks


def poly_hash(message, k1):
    h = 0
    for m in message_blocks(message):
        h = (h + m) * k1 % P61
    return h


def wc_mac(message, keys):
    return poly_hash(message, keys.k1) ^ keys.k2


def wc_verify(message, tag, keys):
    if not 0 <= tag < (1 << 64):
        return False
    expected = wc_mac(message, keys).to_bytes(8, "big")
    return hmac.compare_digest(expected, int(tag).to_bytes(8, "big"))
