from hypothesis import given, settings, strategies as st
import numpy as np
import pytest

from conftest import synthetic_tags
from qstt.codec import (
    DiffTagArray,
    Permutation,
    decode_rho,
    deserialize_diffs,
    encode_rho,
    from_diffs,
    partition,
    partition_sizes,
    sample_permutation,
    serialize_diffs,
    shuffle,
    to_diffs,
    unshuffle,
)
from qstt.errors import CorruptPermutation, DiffOverflow, InvalidParameter, LengthMismatch
from qstt.timebase import TimeTagArray


def test_sixteen_diffs_into_four_blocks():
    diffs = list(range(1, 17))
    p = partition(diffs, 2)
    assert p.partitions == ((1, 2, 3, 4), (5, 6, 7, 8), (9, 10, 11, 12), (13, 14, 15, 16))
    assert p.ragged_tail_len == 0


def test_block_permutation_3142():
    p = partition(list(range(1, 17)), 2)
    rho = Permutation.from_one_based((3, 1, 4, 2))
    assert shuffle(p, rho) == [9, 10, 11, 12, 1, 2, 3, 4, 13, 14, 15, 16, 5, 6, 7, 8]
    assert unshuffle(shuffle(p, rho), rho) == list(range(1, 17))


def test_uneven_partition_front_loads_extra():
    assert partition_sizes(10, 2) == [3, 3, 2, 2]
    assert partition_sizes(3, 2) == [1, 1, 1, 0]
    p = partition(list(range(10)), 2)
    assert p.partitions[0] == (0, 1, 2) and p.partitions[3] == (8, 9)
    assert p.ragged_tail_len == 2


def test_diff_transform_example():
    tags = TimeTagArray([1000, 3000, 4000, 9000], 1.0)
    d = to_diffs(tags, 1000, 4)
    assert d.t1 == 1000 and d.diffs == (2, 1, 5)
    assert from_diffs(d, 1.0) == tags


def test_diff_overflow_names_minimal_b():
    tags = TimeTagArray([0, 1000, 40_000], 1.0)
    with pytest.raises(DiffOverflow) as exc:
        to_diffs(tags, 1000, 5)
    assert exc.value.index == 1 and exc.value.min_b == 6


def test_diff_transform_rejects_bad_input():
    with pytest.raises(InvalidParameter):
        to_diffs(TimeTagArray([], 1.0), 1000, 8)
    with pytest.raises(InvalidParameter):
        to_diffs(TimeTagArray([0, 1500], 1.0), 1000, 8)


def test_diffs_drop_the_clock_offset():
    rng = np.random.default_rng(1)
    t = synthetic_tags(rng, 50, start=5_000_000)
    shifted = TimeTagArray(t.tags + 123_000, t.duration)
    assert to_diffs(t, 1000, 10).diffs == to_diffs(shifted, 1000, 10).diffs


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 2**12 - 1), max_size=200), st.integers(0, 6), st.integers(0, 2**32))
def test_partition_shuffle_roundtrip(diffs, k, seed):
    p = partition(diffs, k)
    assert p.flatten() == diffs
    rho = sample_permutation(k, seed)
    out = shuffle(p, rho)
    assert sorted(out) == sorted(diffs)
    assert unshuffle(out, rho) == diffs


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 24).flatmap(lambda b: st.tuples(
    st.just(b), st.lists(st.integers(0, 2**b - 1), max_size=100))))
def test_serialize_roundtrip(case):
    b, diffs = case
    bits = serialize_diffs(diffs, b)
    assert len(bits) == b * len(diffs)
    assert deserialize_diffs(bits, b) == diffs


def test_serialize_example():
    assert serialize_diffs([1, 2, 1023], 10) == "0000000001" "0000000010" "1111111111"
    with pytest.raises(DiffOverflow):
        serialize_diffs([1024], 10)
    with pytest.raises(LengthMismatch):
        deserialize_diffs("0" * 11, 10)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 8), st.integers(0, 2**32))
def test_rho_encoding_roundtrip(k, seed):
    rho = sample_permutation(k, seed)
    bits = encode_rho(rho)
    assert len(bits) == k * 2**k
    assert decode_rho(bits, k) == rho


def test_rho_encoding_example():
    rho = Permutation.from_one_based((3, 1, 4, 2))
    assert encode_rho(rho) == "10" "00" "11" "01"
    assert rho.one_based() == (3, 1, 4, 2)
    assert rho.inverse().inverse() == rho


def test_corrupt_permutation():
    with pytest.raises(CorruptPermutation):
        decode_rho("00" "00" "11" "01", 2)
    with pytest.raises(LengthMismatch):
        decode_rho("0" * 7, 2)


def test_diff_array_validates_width():
    with pytest.raises(DiffOverflow):
        DiffTagArray(0, (16,), 1000, 4)


def test_sampled_permutations_are_uniform():
    counts = {}
    for seed in range(24_000):
        key = sample_permutation(2, seed).mapping
        counts[key] = counts.get(key, 0) + 1
    assert len(counts) == 24
    # each of 4! orders expected 1000 times
    assert max(abs(c - 1000) for c in counts.values()) < 5 * 1000**0.5
