"""Diff-time-tag transform, partition-level shuffling and fixed-width packing."""

from dataclasses import dataclass

import numpy as np

from .bits import int_to_bits
from .errors import CorruptPermutation, DiffOverflow, InvalidParameter, LengthMismatch
from .timebase import TimeTagArray


@dataclass(frozen=True)
class DiffTagArray:
    t1: int
    diffs: tuple
    codec_tick: int
    b: int

    def __post_init__(self):
        limit = 1 << self.b
        for j, d in enumerate(self.diffs):
            if not 0 <= d < limit:
                raise DiffOverflow(j, d, self.b, min_bits(d))


def min_bits(value):
    return max(1, int(value).bit_length())


def to_diffs(tags, codec_tick, b):
    """First tag plus inter-arrival gaps in units of ``codec_tick``."""
    arr = tags.tags if isinstance(tags, TimeTagArray) else np.asarray(tags, dtype=np.int64)
    if arr.size == 0:
        raise InvalidParameter("cannot encode an empty time-tag array")
    if codec_tick <= 0:
        raise InvalidParameter("codec tick must be positive")
    gaps = np.diff(arr)
    if gaps.size and np.any(gaps <= 0):
        raise InvalidParameter("tags must be strictly increasing")
    if gaps.size and np.any(gaps % codec_tick):
        j = int(np.flatnonzero(gaps % codec_tick)[0])
        raise InvalidParameter(f"gap {j} ({gaps[j]} ps) is not a multiple of codec tick {codec_tick}")
    diffs = gaps // codec_tick
    if diffs.size:
        too_big = np.flatnonzero(diffs >= (1 << b))
        if too_big.size:
            j = int(too_big[0])
            raise DiffOverflow(j, int(diffs[j]), b, min_bits(diffs.max()))
    return DiffTagArray(int(arr[0]), tuple(int(d) for d in diffs), int(codec_tick), int(b))


def from_diffs(d, duration=0.0):
    steps = np.asarray(d.diffs, dtype=np.int64) * d.codec_tick
    tags = np.concatenate([[d.t1], d.t1 + np.cumsum(steps)]).astype(np.int64)
    return TimeTagArray(tags, duration)


@dataclass(frozen=True)
class Permutation:
    """Bijection on 2^k block indices, stored zero-based.

    ``mapping[i]`` is the input block placed at output position i.
    """

    mapping: tuple
    k: int

    def __post_init__(self):
        n = 1 << self.k
        if len(self.mapping) != n or sorted(self.mapping) != list(range(n)):
            raise CorruptPermutation(f"not a bijection on {n} indices: {self.mapping!r}")

    @classmethod
    def identity(cls, k):
        return cls(tuple(range(1 << k)), k)

    @classmethod
    def from_one_based(cls, mapping):
        n = len(mapping)
        k = n.bit_length() - 1
        if 1 << k != n:
            raise InvalidParameter("a block permutation has 2^k entries")
        return cls(tuple(i - 1 for i in mapping), k)

    def one_based(self):
        return tuple(i + 1 for i in self.mapping)

    def inverse(self):
        inv = [0] * len(self.mapping)
        for pos, src in enumerate(self.mapping):
            inv[src] = pos
        return Permutation(tuple(inv), self.k)


@dataclass(frozen=True)
class PartitionedDiffs:
    partitions: tuple
    ragged_tail_len: int

    @property
    def k(self):
        return len(self.partitions).bit_length() - 1

    def flatten(self):
        return [d for block in self.partitions for d in block]


def partition_sizes(n, k):
    """Near-equal block sizes; the first n mod 2^k blocks take one extra."""
    blocks = 1 << k
    base, extra = divmod(n, blocks)
    return [base + 1 if i < extra else base for i in range(blocks)]


def partition(diffs, k):
    diffs = list(diffs)
    sizes = partition_sizes(len(diffs), k)
    out = []
    start = 0
    for size in sizes:
        out.append(tuple(diffs[start:start + size]))
        start += size
    return PartitionedDiffs(tuple(out), len(diffs) % (1 << k))


def shuffle(p, rho):
    if len(p.partitions) != len(rho.mapping):
        raise InvalidParameter(
            f"permutation over {len(rho.mapping)} blocks applied to {len(p.partitions)} partitions"
        )
    return [d for src in rho.mapping for d in p.partitions[src]]


def unshuffle(shuffled, rho):
    shuffled = list(shuffled)
    sizes = partition_sizes(len(shuffled), rho.k)
    blocks = [None] * len(sizes)
    start = 0
    for src in rho.mapping:
        blocks[src] = shuffled[start:start + sizes[src]]
        start += sizes[src]
    return [d for block in blocks for d in block]


def sample_permutation(k, seed):
    if k < 0:
        raise InvalidParameter("k must be non-negative")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return Permutation(tuple(int(i) for i in rng.permutation(1 << k)), k)


def encode_rho(rho):
    """2^k zero-based indices, k bits each, MSB first."""
    return "".join(int_to_bits(i, rho.k) for i in rho.mapping)


def decode_rho(bits, k):
    n = 1 << k
    if len(bits) != k * n:
        raise LengthMismatch(f"permutation over 2^{k} blocks needs {k * n} bits, got {len(bits)}")
    if k == 0:
        return Permutation.identity(0)
    mapping = tuple(int(bits[i * k:(i + 1) * k], 2) for i in range(n))
    return Permutation(mapping, k)


def serialize_diffs(diffs, b):
    limit = 1 << b
    for j, d in enumerate(diffs):
        if not 0 <= d < limit:
            raise DiffOverflow(j, d, b, min_bits(d))
    return "".join(format(d, f"0{b}b") for d in diffs)


def deserialize_diffs(bits, b):
    if len(bits) % b:
        raise LengthMismatch(f"{len(bits)} bits is not a whole number of {b}-bit fields")
    return [int(bits[i:i + b], 2) for i in range(0, len(bits), b)]
