"""Clock offset and drift from the coincidence cross-correlation of two tag arrays.

Convention: a histogram delay t' is added to Bob's tags, so bin t' counts
pairs with |t_B + t' - t_A| <= w/2. A positive offset dt_BA = t_B - t_A
therefore shows up as a peak at t' = -dt_BA. SyncEstimate.offset reports
dt_BA itself.
"""

import csv
from dataclasses import dataclass, replace
import logging
import math

import numpy as np
from scipy import stats

from .errors import DriftEstimationError, InvalidParameter, NoLock, UnreliablePeak
from .timebase import PS_PER_S, TimeTagArray

log = logging.getLogger(__name__)

FINE_BIN = 500
FINE_WINDOW = 50_000
COARSE_BIN = 100_000
MAX_OFFSET = 1_000_000_000
PEAK_EXCLUSION_BINS = 5
LOCK_FALSE_ALARM = 1e-6


@dataclass(eq=False)
class CorrelationHistogram:
    bin_width: int  # ps
    delays: np.ndarray  # bin centers t', ps
    counts: np.ndarray
    accumulation_time: float  # s

    @property
    def peak_index(self):
        return int(np.argmax(self.counts))

    @property
    def peak_delay(self):
        return int(self.delays[self.peak_index])

    def to_csv(self, path, phase=None):
        with open(path, "w", newline="") as fh:
            write_histogram_rows(csv.writer(fh), self, phase, header=True)


def write_histogram_rows(writer, h, phase=None, header=False):
    if header:
        writer.writerow(["delay_ps", "counts"] + (["phase"] if phase is not None else []))
    for d, c in zip(h.delays, h.counts):
        writer.writerow([int(d), int(c)] + ([phase] if phase is not None else []))


@dataclass
class SyncEstimate:
    offset: float  # dt_BA, ps
    drift: float = 0.0  # ps/s
    peak_count: int = 0
    accidental_floor: float = 0.0  # counts per bin
    snr: float = 0.0
    sigma: float = float("nan")  # ps
    reliable: bool = True
    coincidences: float = 0.0  # background-subtracted counts in the peak window
    offset_stderr: float = float("nan")
    drift_stderr: float = float("nan")
    degraded: bool = False
    histogram: CorrelationHistogram = None

    def residual_bound(self):
        """3 sigma / sqrt(peak_count): the tolerance on a corrected offset."""
        return 3.0 * self.sigma / math.sqrt(max(self.peak_count, 1))


def _tags(x):
    return x.tags if isinstance(x, TimeTagArray) else np.asarray(x, dtype=np.int64)


def _duration(a, b):
    durations = [x.duration for x in (a, b) if isinstance(x, TimeTagArray)]
    return max(durations) if durations else 0.0


def pair_differences(a, b, lo, hi):
    """All t_A - t_B in the closed interval [lo, hi], as int64."""
    ta, tb = _tags(a), _tags(b)
    if ta.size == 0 or tb.size == 0:
        return np.zeros(0, dtype=np.int64)
    start = np.searchsorted(ta, tb + lo, side="left")
    stop = np.searchsorted(ta, tb + hi, side="right")
    counts = stop - start
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    owner = np.repeat(np.arange(tb.size), counts)
    # position of each pair within its run of partners
    first = np.repeat(np.cumsum(counts) - counts, counts)
    idx = np.repeat(start, counts) + (np.arange(total) - first)
    return ta[idx] - tb[owner]


def cross_correlate(a, b, scan_range, bin_width, center=0):
    """Coincidence counts for delays center + j w, |j w| <= scan_range.

    Bins are closed on both sides, so a pair sitting exactly on a shared
    edge counts in both neighbours, matching the pairwise definition.
    """
    w = int(bin_width)
    if w <= 0:
        raise InvalidParameter("bin width must be positive")
    if scan_range < 0:
        raise InvalidParameter("scan range must be non-negative")
    center = int(round(center))
    n_side = int(scan_range // w)
    delays = center + w * np.arange(-n_side, n_side + 1, dtype=np.int64)
    nbins = delays.size
    # t_A - t_B must lie within w/2 of some delay; work in doubled units
    lo2 = 2 * int(delays[0]) - w
    hi2 = 2 * int(delays[-1]) + w
    rel = pair_differences(a, b, -((-lo2) // 2), hi2 // 2)
    counts = np.zeros(nbins, dtype=np.int64)
    if rel.size:
        x = 2 * (rel - delays[0]) + w  # in [0, 2 w nbins]
        j = x // (2 * w)
        edge = (x % (2 * w) == 0) & (j > 0)
        inside = j < nbins
        np.add.at(counts, j[inside], 1)
        np.add.at(counts, j[edge] - 1, 1)
    return CorrelationHistogram(w, delays, counts, _duration(a, b))


def _floor(h, peak, exclude_bins=PEAK_EXCLUSION_BINS):
    mask = np.abs(np.arange(h.counts.size) - peak) > exclude_bins
    if not mask.any():
        return 0.0
    return float(h.counts[mask].mean())


def coarse_align(a, b, max_offset=MAX_OFFSET, coarse_bin=COARSE_BIN):
    """Candidate dt_BA from a wide, coarse scan; raises NoLock if nothing stands out."""
    h = cross_correlate(a, b, max_offset, coarse_bin)
    peak = h.peak_index
    top = int(h.counts[peak])
    mean = max(_floor(h, peak, 2), h.counts.sum() / h.counts.size)
    # chance that the largest of all bins reaches `top` from background alone
    p_value = h.counts.size * stats.poisson.sf(top - 1, mean) if mean > 0 else 0.0
    if top == 0 or p_value >= LOCK_FALSE_ALARM:
        raise NoLock(
            f"no significant coincidence peak within +/-{max_offset} ps "
            f"(max {top} counts vs mean {mean:.3g}, p={p_value:.3g})"
        )
    return -float(h.peak_delay)


def fit_peak_sigma(h, center=None, expected_sigma=None, floor=None):
    """RMS width of the background-subtracted peak within +/-3 sigma.

    Bin quantization is removed with Sheppard's correction. Without an
    expected sigma, the window is refined from the data.
    """
    peak = h.peak_index
    if floor is None:
        floor = _floor(h, peak)
    if center is None:
        center = float(h.delays[peak])
    if h.counts[peak] < floor + 5 * math.sqrt(floor):
        raise UnreliablePeak("peak does not stand out of the accidental floor")
    half = expected_sigma if expected_sigma else 2.0 * h.bin_width
    sigma = None
    for _ in range(1 if expected_sigma else 20):
        sel = np.abs(h.delays - center) <= 3 * half
        weights = np.clip(h.counts[sel] - floor, 0, None)
        if weights.sum() <= 0:
            raise UnreliablePeak("no counts above the floor near the peak")
        var = np.sum(weights * (h.delays[sel] - center) ** 2) / weights.sum()
        new = math.sqrt(max(var - h.bin_width**2 / 12.0, 0.0))
        converged = sigma is not None and abs(new - sigma) < 1e-3 * h.bin_width
        sigma = new
        if converged:
            break
        # never shrink the window below the peak bin and its neighbours
        half = max(new, h.bin_width / 2.0)
    return sigma


def _centroid(h, floor, center, half_width):
    sel = np.abs(h.delays - center) <= half_width
    weights = np.clip(h.counts[sel] - floor, 0, None).astype(float)
    if weights.sum() <= 0:
        return center, 0.0
    return float(np.sum(weights * h.delays[sel]) / weights.sum()), float(weights.sum())


def fine_align(a, b, candidate=0.0, window=FINE_WINDOW, bin_width=FINE_BIN, expected_sigma=None):
    """Sub-bin offset estimate around a coarse candidate dt_BA.

    The 3-bin centroid around the maximum seeds an iterated
    background-subtracted centroid over +/-3 sigma of the peak.
    """
    h = cross_correlate(a, b, window, bin_width, center=-candidate)
    peak = h.peak_index
    floor = _floor(h, peak)
    top = int(h.counts[peak])
    reliable = top > 0 and top >= floor + 5 * math.sqrt(floor)
    snr = top / floor if floor > 0 else float("inf") if top else 0.0
    if not reliable:
        return SyncEstimate(
            offset=-float(h.delays[peak]), peak_count=top, accidental_floor=floor, snr=snr,
            reliable=False, histogram=h,
        )

    # peak bin and its two neighbours
    center, _ = _centroid(h, floor, float(h.delays[peak]), 1.5 * h.bin_width)
    sigma = fit_peak_sigma(h, center, expected_sigma, floor)
    half = max(3 * sigma, 1.5 * h.bin_width)
    signal = 0.0
    for _ in range(50):
        new, signal = _centroid(h, floor, center, half)
        if abs(new - center) < 1e-6:
            break
        center = new
    stderr = max(sigma, h.bin_width / math.sqrt(12)) / math.sqrt(max(signal, 1.0))
    return SyncEstimate(
        offset=-center, peak_count=top, accidental_floor=floor, snr=snr, sigma=sigma,
        reliable=True, coincidences=signal, offset_stderr=stderr, histogram=h,
    )


def estimate_drift(a, b, block_length=4.0, candidate=None, window=FINE_WINDOW,
                   bin_width=FINE_BIN, expected_sigma=None, min_blocks=4, start=0):
    """Offset and linear drift from per-block fine offsets (weighted least squares).

    Blocks tile [start, start + duration). Returns dt_BA at t = 0 and the
    drift in ps/s. Blocks without a reliable peak are dropped and the
    estimate flagged as degraded.
    """
    ta = a if isinstance(a, TimeTagArray) else TimeTagArray(a, 0.0)
    tb = b if isinstance(b, TimeTagArray) else TimeTagArray(b, 0.0)
    duration = max(ta.duration, tb.duration)
    n_blocks = int(duration // block_length + 1e-9)
    if n_blocks < min_blocks:
        raise DriftEstimationError(
            f"{duration} s holds {n_blocks} blocks of {block_length} s; need {min_blocks}"
        )
    if candidate is None:
        candidate = coarse_align(ta, tb)
    step = int(round(block_length * PS_PER_S))
    times, offsets, errors, sigmas, peaks = [], [], [], [], []
    dropped = 0
    for i in range(n_blocks):
        lo, hi = start + i * step, start + (i + 1) * step
        est = fine_align(
            ta.window(lo, hi), tb.window(lo, hi), candidate, window, bin_width, expected_sigma
        )
        if not est.reliable or not est.coincidences > 0:
            dropped += 1
            log.warning("block %d: no reliable coincidence peak, dropped from drift fit", i)
            continue
        times.append((lo + hi) / 2 / PS_PER_S)
        offsets.append(est.offset)
        errors.append(est.offset_stderr)
        sigmas.append(est.sigma)
        peaks.append(est.peak_count)
    if len(times) < min_blocks:
        raise DriftEstimationError(
            f"only {len(times)} of {n_blocks} blocks gave a reliable peak; need {min_blocks}"
        )
    t = np.asarray(times)
    y = np.asarray(offsets)
    wts = 1.0 / np.asarray(errors) ** 2
    design = np.column_stack([np.ones_like(t), t])
    normal = design.T @ (design * wts[:, None])
    cov = np.linalg.inv(normal)
    intercept, slope = cov @ (design.T @ (wts * y))
    return SyncEstimate(
        offset=float(intercept), drift=float(slope), peak_count=int(sum(peaks)),
        sigma=float(np.average(sigmas, weights=wts)), reliable=True,
        offset_stderr=float(math.sqrt(cov[0, 0])), drift_stderr=float(math.sqrt(cov[1, 1])),
        degraded=dropped > 0,
    )


def apply_correction(b, estimate):
    """Bob's tags moved onto Alice's timescale: t - (offset + drift t)."""
    t = b.tags.astype(float)
    corrected = np.rint(t - (estimate.offset + estimate.drift * t / PS_PER_S)).astype(np.int64)
    return TimeTagArray(np.unique(corrected), b.duration)


def synchronize(a, b, block_length=4.0, max_offset=MAX_OFFSET, coarse_bin=COARSE_BIN,
                window=FINE_WINDOW, bin_width=FINE_BIN, expected_sigma=None):
    """Coarse lock, drift fit, correction and a final fine check.

    Returns (drift estimate, corrected b, fine estimate after correction).
    """
    candidate = coarse_align(a, b, max_offset, coarse_bin)
    drift = estimate_drift(a, b, block_length, candidate, window, bin_width, expected_sigma)
    corrected = apply_correction(b, drift)
    after = fine_align(a, corrected, 0.0, window, bin_width, expected_sigma)
    drift = replace(drift, sigma=after.sigma if after.reliable else drift.sigma)
    return drift, corrected, after
