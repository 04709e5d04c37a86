"""Ascon-128 (v1.2): 128-bit key and nonce, 64-bit rate, 12/6 rounds.

Only what the cascade needs: the AEAD encryption (used for known-answer
checks) and the keystream obtained by encrypting an all-zero plaintext.
"""

MASK = (1 << 64) - 1
ROUND_CONSTANTS = [0xF0, 0xE1, 0xD2, 0xC3, 0xB4, 0xA5, 0x96, 0x87, 0x78, 0x69, 0x5A, 0x4B]
IV_128 = 0x80400C0600000000
RATE = 8


def _rotr(x, n):
    return ((x >> n) | (x << (64 - n))) & MASK


def permutation(s, rounds):
    x0, x1, x2, x3, x4 = s
    for c in ROUND_CONSTANTS[12 - rounds:]:
        x2 ^= c
        # substitution layer
        x0 ^= x4
        x4 ^= x3
        x2 ^= x1
        t0 = ~x0 & x1
        t1 = ~x1 & x2
        t2 = ~x2 & x3
        t3 = ~x3 & x4
        t4 = ~x4 & x0
        x0 ^= t1
        x1 ^= t2
        x2 ^= t3
        x3 ^= t4
        x4 ^= t0
        x1 ^= x0
        x0 ^= x4
        x3 ^= x2
        x2 = ~x2 & MASK
        # linear diffusion layer
        x0 ^= _rotr(x0, 19) ^ _rotr(x0, 28)
        x1 ^= _rotr(x1, 61) ^ _rotr(x1, 39)
        x2 ^= _rotr(x2, 1) ^ _rotr(x2, 6)
        x3 ^= _rotr(x3, 10) ^ _rotr(x3, 17)
        x4 ^= _rotr(x4, 7) ^ _rotr(x4, 41)
    s[:] = [x0 & MASK, x1 & MASK, x2 & MASK, x3 & MASK, x4 & MASK]


def _initialize(key, nonce):
    if len(key) != 16 or len(nonce) != 16:
        raise ValueError("Ascon-128 takes a 16-byte key and a 16-byte nonce")
    k0 = int.from_bytes(key[:8], "big")
    k1 = int.from_bytes(key[8:], "big")
    s = [IV_128, k0, k1, int.from_bytes(nonce[:8], "big"), int.from_bytes(nonce[8:], "big")]
    permutation(s, 12)
    s[3] ^= k0
    s[4] ^= k1
    return s


def _absorb_ad(s, ad):
    if ad:
        padded = ad + b"\x80" + bytes(RATE - 1 - len(ad) % RATE)
        for i in range(0, len(padded), RATE):
            s[0] ^= int.from_bytes(padded[i:i + RATE], "big")
            permutation(s, 6)
    s[4] ^= 1


def encrypt(key, nonce, associated_data, plaintext):
    """Ciphertext followed by the 16-byte tag."""
    s = _initialize(key, nonce)
    _absorb_ad(s, associated_data)
    out = bytearray()
    full = len(plaintext) - len(plaintext) % RATE
    for i in range(0, full, RATE):
        s[0] ^= int.from_bytes(plaintext[i:i + RATE], "big")
        out += s[0].to_bytes(8, "big")
        permutation(s, 6)
    tail = plaintext[full:]
    s[0] ^= int.from_bytes(tail + b"\x80" + bytes(RATE - 1 - len(tail)), "big")
    out += s[0].to_bytes(8, "big")[:len(tail)]
    # finalization
    k0 = int.from_bytes(key[:8], "big")
    k1 = int.from_bytes(key[8:], "big")
    s[1] ^= k0
    s[2] ^= k1
    permutation(s, 12)
    s[3] ^= k0
    s[4] ^= k1
    return bytes(out) + s[3].to_bytes(8, "big") + s[4].to_bytes(8, "big")


def keystream(key, nonce, nbytes):
    """Ascon-128 encryption of ``nbytes`` zero bytes with empty associated data."""
    s = _initialize(key, nonce)
    s[4] ^= 1
    out = bytearray()
    while len(out) < nbytes:
        out += s[0].to_bytes(8, "big")
        if len(out) < nbytes:
            permutation(s, 6)
    return bytes(out[:nbytes])
