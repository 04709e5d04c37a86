"""Stand-in for a QKD session: sifting, sampled QBER and an asymptotic key-yield model.

The yield model is floor(f * sifted * (1 - 2 h2(qber))), clamped at zero,
with a calibration factor f. It takes the place of error correction and
privacy amplification and is an upper-limit model, not a real pipeline.
"""

import csv
from dataclasses import dataclass
import math

import numpy as np

from .errors import InvalidParameter
from .timebase import polarization_outcomes


@dataclass(eq=False)
class SiftedKey:
    alice: np.ndarray  # uint8 bits
    bob: np.ndarray

    def __len__(self):
        return int(self.alice.size)


def sift(outcomes):
    """Keep detections where both stations measured in the same basis."""
    matched = outcomes.alice_basis == outcomes.bob_basis
    return SiftedKey(outcomes.alice_bit[matched].copy(), outcomes.bob_bit[matched].copy())


@dataclass(eq=False)
class QberEstimate:
    qber: float
    sample_size: int
    remaining: SiftedKey  # sifted key with the disclosed sample removed


def estimate_qber(sifted, sample_fraction=0.1, seed=None):
    """Disagreement rate on a disclosed random sample; sampled bits are discarded."""
    if not 0 < sample_fraction <= 1:
        raise InvalidParameter(f"sample fraction must be in (0, 1], got {sample_fraction}")
    n = len(sifted)
    m = int(round(n * sample_fraction))
    if m == 0:
        raise InvalidParameter("QBER sample is empty")
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=m, replace=False)
    errors = int(np.count_nonzero(sifted.alice[idx] != sifted.bob[idx]))
    keep = np.ones(n, dtype=bool)
    keep[idx] = False
    rest = SiftedKey(sifted.alice[keep], sifted.bob[keep])
    return QberEstimate(errors / m, m, rest)


def binary_entropy(p):
    if p <= 0 or p >= 1:
        return 0.0
    return -p * math.log2(p) - (1 - p) * math.log2(1 - p)


def secret_fraction(qber):
    return max(0.0, 1.0 - 2.0 * binary_entropy(qber))


def model_key_yield(sifted_count, qber, yield_factor):
    if not 0 < yield_factor <= 1:
        raise InvalidParameter(f"yield factor must be in (0, 1], got {yield_factor}")
    if not 0 <= qber <= 1:
        raise InvalidParameter(f"QBER {qber} outside [0, 1]")
    return math.floor(yield_factor * sifted_count * secret_fraction(qber))


def calibrate_yield_factor(target_rate, coincidence_rate, T_run, visibility, sample_fraction=0.1):
    """Factor that makes the expected gross rate equal ``target_rate`` bits/s."""
    expected_sifted = coincidence_rate * T_run / 2 * (1 - sample_fraction)
    frac = secret_fraction((1 - visibility) / 2)
    if expected_sifted <= 0 or frac <= 0:
        raise InvalidParameter("no key can be produced at this visibility or rate")
    factor = target_rate * T_run / (expected_sifted * frac)
    if not 0 < factor <= 1:
        raise InvalidParameter(
            f"target {target_rate} bits/s needs yield factor {factor:.3g}, outside (0, 1]"
        )
    return factor


@dataclass
class SessionReport:
    session: int
    sifted_bits: int
    qber: float
    gross_key_bits: int
    consumed_bits: int
    T_run: float

    def __post_init__(self):
        if not 0 <= self.qber <= 1:
            raise InvalidParameter(f"QBER {self.qber} outside [0, 1]")

    @property
    def gross_rate(self):
        return self.gross_key_bits / self.T_run

    @property
    def net_rate(self):
        return (self.gross_key_bits - self.consumed_bits) / self.T_run


@dataclass(eq=False)
class QkdSession:
    report: SessionReport
    key: str  # bits deposited for later sessions


def run_qkd_session(session, n_coincidences, visibility, yield_factor, T_run, seed,
                    sample_fraction=0.1):
    """Sift, estimate QBER and model the key for one session.

    The key bits are taken from Alice's remaining sifted bits, which both
    stations are assumed to share after (unmodelled) error correction.
    ``consumed_bits`` is left at 0 for the caller to fill from the ledger.
    """
    ss = np.random.SeedSequence(seed)
    outcome_seed, sample_seed = ss.spawn(2)
    sifted = sift(polarization_outcomes(n_coincidences, visibility, outcome_seed))
    est = estimate_qber(sifted, sample_fraction, sample_seed)
    # disclosed sample bits are gone; only the rest can become key
    gross = model_key_yield(len(est.remaining), est.qber, yield_factor)
    key = "".join("1" if x else "0" for x in est.remaining.alice[:gross])
    report = SessionReport(session, len(est.remaining), est.qber, gross, 0, T_run)
    return QkdSession(report, key)


def write_sessions_csv(path, reports):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["session", "gross", "consumed", "net", "qber"])
        for r in reports:
            w.writerow([
                r.session, r.gross_key_bits, r.consumed_bits,
                f"{r.net_rate:.6f}", f"{r.qber:.6f}",
            ])
