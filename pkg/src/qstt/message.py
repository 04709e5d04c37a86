"""The secure timing message and its byte layout on the classical channel.

Layout (big-endian integers):

    magic "QSTT" (4) | version (1) | session id (4) | T_run in us (8) | n (4)
    | k (1) | b (1) | |Q| (4) | codec tick in ps (8) | t1* (8)
    | rho* (ceil(k 2^k / 8)) | Q (4 |Q|) | pi (1) | dt_enc (ceil(b |Q| / 8))
    | dt_enc_is (ceil(b (n - 1 - |Q|) / 8)) | MAC tag (8)

Bit fields are packed MSB first and zero-padded to whole bytes. The 61-bit
tag sits in the low bits of its 8 bytes.
"""

from dataclasses import dataclass, field
import struct

from .bits import bits_to_bytes, bytes_to_bits
from .errors import LengthMismatch, WireError

MAGIC = b"QSTT"
VERSION = 1
K_MAX = 16
B_MAX = 64
T1_BITS = 64
PI_BITS = 8
HEADER = struct.Struct(">4sBIQIBBIQ")


@dataclass
class SecureTimingMessage:
    session_id: int
    n: int
    k: int
    b: int
    codec_tick: int
    t_run_us: int
    t1_star: str
    rho_star: str
    q_indices: tuple
    pi: str
    dt_enc: str
    dt_enc_is: str
    mac_tag: int = 0
    version: int = VERSION
    # bytes as received, so the MAC covers exactly what arrived
    raw: bytes = field(default=None, compare=False, repr=False)

    @property
    def q_count(self):
        return len(self.q_indices)

    @property
    def t_run(self):
        return self.t_run_us / 1e6

    def field_lengths(self):
        """Exact bit length of every variable field, from the header alone."""
        return {
            "t1_star": T1_BITS,
            "rho_star": self.k * (1 << self.k),
            "pi": PI_BITS,
            "dt_enc": self.b * self.q_count,
            "dt_enc_is": self.b * (self.n - 1 - self.q_count),
        }

    def check_lengths(self):
        if self.n < 1:
            raise LengthMismatch("a message carries at least one time-tag")
        if self.q_count > self.n - 1:
            raise LengthMismatch(f"|Q| = {self.q_count} exceeds n - 1 = {self.n - 1}")
        for name, nbits in self.field_lengths().items():
            got = len(getattr(self, name))
            if got != nbits:
                raise LengthMismatch(f"{name} has {got} bits, header implies {nbits}")


def encode_body(msg):
    """Everything except the trailing MAC tag."""
    msg.check_lengths()
    parts = [
        HEADER.pack(
            MAGIC, msg.version, msg.session_id, msg.t_run_us, msg.n,
            msg.k, msg.b, msg.q_count, msg.codec_tick,
        ),
        bits_to_bytes(msg.t1_star),
        bits_to_bytes(msg.rho_star),
        b"".join(struct.pack(">I", q) for q in msg.q_indices),
        bits_to_bytes(msg.pi),
        bits_to_bytes(msg.dt_enc),
        bits_to_bytes(msg.dt_enc_is),
    ]
    return b"".join(parts)


def wire_encode(msg):
    return encode_body(msg) + int(msg.mac_tag).to_bytes(8, "big")


def _nbytes(nbits):
    return (nbits + 7) // 8


def wire_decode(data):
    data = bytes(data)
    if len(data) < len(MAGIC):
        raise WireError(WireError.TRUNCATED, f"{len(data)} bytes is shorter than the magic")
    if data[:4] != MAGIC:
        raise WireError(WireError.BAD_MAGIC, f"expected {MAGIC!r}, got {data[:4]!r}")
    if len(data) < HEADER.size:
        raise WireError(WireError.TRUNCATED, f"header needs {HEADER.size} bytes, got {len(data)}")
    _, version, sid, t_run_us, n, k, b, q, tick = HEADER.unpack_from(data)
    if version != VERSION:
        raise WireError(WireError.BAD_VERSION, f"unsupported version {version}")
    if n < 1 or q > n - 1 or k > K_MAX or not 1 <= b <= B_MAX:
        raise WireError(
            WireError.LENGTH_MISMATCH, f"inconsistent header: n={n} k={k} b={b} |Q|={q}"
        )
    sizes = [
        ("t1_star", T1_BITS, 8),
        ("rho_star", k * (1 << k), _nbytes(k * (1 << k))),
        ("q_indices", None, 4 * q),
        ("pi", PI_BITS, 1),
        ("dt_enc", b * q, _nbytes(b * q)),
        ("dt_enc_is", b * (n - 1 - q), _nbytes(b * (n - 1 - q))),
        ("mac_tag", None, 8),
    ]
    total = HEADER.size + sum(size for _, _, size in sizes)
    if len(data) < total:
        raise WireError(WireError.TRUNCATED, f"message needs {total} bytes, got {len(data)}")
    if len(data) > total:
        raise WireError(WireError.LENGTH_MISMATCH, f"{len(data) - total} trailing bytes")

    fields = {}
    pos = HEADER.size
    for name, nbits, size in sizes:
        chunk = data[pos:pos + size]
        pos += size
        if name == "q_indices":
            fields[name] = tuple(struct.unpack(f">{q}I", chunk))
        elif name == "mac_tag":
            fields[name] = int.from_bytes(chunk, "big")
        else:
            fields[name] = bytes_to_bits(chunk, nbits)
    return SecureTimingMessage(
        session_id=sid, n=n, k=k, b=b, codec_tick=tick, t_run_us=t_run_us,
        version=version, raw=data, **fields,
    )
