"""Seeded simulation of entangled-pair births and per-station detection.

All times are integer picoseconds (int64). A detection at station alpha is

    t_alpha = t_birth + L_alpha / c + jitter,

mapped through the station clock (offset + linear drift), quantized down to
the tagger grid and clipped to the run window.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import InvalidParameter

SPEED_OF_LIGHT = 299_792_458.0  # m/s
PS_PER_S = 10**12


def propagation_delay_ps(path_length):
    return path_length / SPEED_OF_LIGHT * PS_PER_S


def transmittance_from_db(loss_db):
    return 10.0 ** (-loss_db / 10.0)


@dataclass(frozen=True)
class ClockModel:
    """Local clock error: local(t) = t + offset + drift_rate * t.

    offset is in picoseconds; drift_rate in picoseconds of error per second
    of true time (0.25 ns/s -> 250.0).
    """

    offset: float = 0.0
    drift_rate: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.offset) and math.isfinite(self.drift_rate)):
            raise InvalidParameter("clock offset and drift must be finite")

    def local(self, t_ps):
        return t_ps + self.offset + self.drift_rate * (np.asarray(t_ps, dtype=float) / PS_PER_S)


@dataclass(frozen=True)
class ChannelModel:
    path_length: float = 0.0  # m
    transmittance: float = 1.0
    dark_count_rate: float = 0.0  # 1/s
    detector_jitter_sigma: float = 0.0  # ps
    tagger_jitter_sigma: float = 0.0  # ps
    tagger_resolution: int = 1  # ps

    def __post_init__(self):
        if not 0.0 <= self.transmittance <= 1.0:
            raise InvalidParameter(f"transmittance {self.transmittance} outside [0, 1]")
        if self.detector_jitter_sigma < 0 or self.tagger_jitter_sigma < 0:
            raise InvalidParameter("jitter sigmas must be non-negative")
        if self.dark_count_rate < 0:
            raise InvalidParameter("dark count rate must be non-negative")
        if int(self.tagger_resolution) != self.tagger_resolution or self.tagger_resolution <= 0:
            raise InvalidParameter("tagger resolution must be a positive integer number of ps")
        if self.path_length < 0:
            raise InvalidParameter("path length must be non-negative")

    @classmethod
    def from_loss_db(cls, loss_db, **kwargs):
        return cls(transmittance=transmittance_from_db(loss_db), **kwargs)


@dataclass(eq=False)
class TimeTagArray:
    """Strictly increasing detection times (int64 ps) covering ``duration`` seconds."""

    tags: np.ndarray
    duration: float

    def __post_init__(self):
        self.tags = np.asarray(self.tags, dtype=np.int64)
        if self.tags.ndim != 1:
            raise InvalidParameter("tags must be one-dimensional")
        if self.tags.size > 1 and not np.all(np.diff(self.tags) > 0):
            raise InvalidParameter("tags must be strictly increasing")
        if self.duration < 0:
            raise InvalidParameter("duration must be non-negative")

    def __len__(self):
        return int(self.tags.size)

    def __eq__(self, other):
        if not isinstance(other, TimeTagArray):
            return NotImplemented
        return self.duration == other.duration and np.array_equal(self.tags, other.tags)

    def window(self, start_ps, stop_ps):
        """Tags in [start_ps, stop_ps), keeping the segment length as duration."""
        lo, hi = np.searchsorted(self.tags, [start_ps, stop_ps], side="left")
        return TimeTagArray(self.tags[lo:hi], (stop_ps - start_ps) / PS_PER_S)

    @property
    def rate(self):
        return len(self) / self.duration if self.duration > 0 else 0.0


@dataclass(eq=False)
class PairEventStream:
    birth_times: np.ndarray
    duration: float
    source_jitter_sigma: float = 0.0  # signal-idler birth-time spread, ps
    rate: float = field(default=0.0)


def generate_pairs(rate, duration, seed, source_jitter_sigma=0.3):
    """Homogeneous Poisson birth times from exponential inter-arrival gaps."""
    if not rate > 0:
        raise InvalidParameter(f"pair rate must be positive, got {rate}")
    if not duration > 0:
        raise InvalidParameter(f"duration must be positive, got {duration}")
    if source_jitter_sigma < 0:
        raise InvalidParameter("source jitter must be non-negative")
    rng = np.random.default_rng(seed)
    mean_gap = PS_PER_S / rate
    end = duration * PS_PER_S
    expected = rate * duration
    chunk = int(expected + 6 * math.sqrt(expected) + 16)
    pieces = []
    last = 0.0
    while last < end:
        times = last + np.cumsum(rng.exponential(mean_gap, size=chunk))
        pieces.append(times)
        last = times[-1]
    births = np.concatenate(pieces)
    births = births[births < end]
    births = np.unique(np.floor(births).astype(np.int64))
    return PairEventStream(births, float(duration), float(source_jitter_sigma), float(rate))


def detect(stream, channel, clock, seed, extra_delay=0.0):
    """Detection record of one station.

    The signal-idler spread enters each station as sigma_int / sqrt(2), so
    the arrival difference between two stations has variance
    sigma_int^2 + 2 sigma_det^2 + 2 sigma_tt^2 before quantization.
    ``extra_delay`` (ps) models a delay inserted on the photon path.
    """
    rng = np.random.default_rng(seed)
    births = stream.birth_times
    keep = rng.random(births.size) < channel.transmittance
    t = births[keep].astype(float)
    t += propagation_delay_ps(channel.path_length) + extra_delay
    sigma = math.sqrt(
        stream.source_jitter_sigma**2 / 2
        + channel.detector_jitter_sigma**2
        + channel.tagger_jitter_sigma**2
    )
    if sigma > 0:
        t += rng.normal(0.0, sigma, size=t.size)
    local = clock.local(t)

    end = stream.duration * PS_PER_S
    n_dark = rng.poisson(channel.dark_count_rate * stream.duration)
    if n_dark:
        local = np.concatenate([local, rng.uniform(0.0, end, size=n_dark)])

    res = int(channel.tagger_resolution)
    tags = np.floor(local / res).astype(np.int64) * res
    tags = tags[(tags >= 0) & (tags <= end)]
    return TimeTagArray(np.unique(tags), stream.duration)


@dataclass(eq=False)
class PolarizationOutcomes:
    """Per-pair basis choices (0 = H/V, 1 = D/A) and key bits at both stations.

    Bob's bits are already flipped, so a matched basis without error gives
    equal bits.
    """

    alice_basis: np.ndarray
    alice_bit: np.ndarray
    bob_basis: np.ndarray
    bob_bit: np.ndarray

    def __len__(self):
        return int(self.alice_basis.size)


def polarization_outcomes(n_detections, visibility, seed):
    if not 0.0 <= visibility <= 1.0:
        raise InvalidParameter(f"visibility {visibility} outside [0, 1]")
    if n_detections < 0:
        raise InvalidParameter("n_detections must be non-negative")
    rng = np.random.default_rng(seed)
    n = int(n_detections)
    alice_basis = rng.integers(0, 2, size=n, dtype=np.uint8)
    bob_basis = rng.integers(0, 2, size=n, dtype=np.uint8)
    alice_bit = rng.integers(0, 2, size=n, dtype=np.uint8)
    error = (rng.random(n) < (1.0 - visibility) / 2.0).astype(np.uint8)
    random_bit = rng.integers(0, 2, size=n, dtype=np.uint8)
    matched = alice_basis == bob_basis
    bob_bit = np.where(matched, alice_bit ^ error, random_bit).astype(np.uint8)
    return PolarizationOutcomes(alice_basis, alice_bit, bob_basis, bob_bit)
