import math

import numpy as np
import pytest
from scipy import optimize

from qstt.errors import InvalidParameter
from qstt.qkdsim import (
    SessionReport,
    SiftedKey,
    binary_entropy,
    calibrate_yield_factor,
    estimate_qber,
    model_key_yield,
    run_qkd_session,
    sift,
    write_sessions_csv,
)
from qstt.timebase import PolarizationOutcomes, polarization_outcomes


def test_sift_keeps_matching_bases():
    n = 100_000
    out = polarization_outcomes(n, 0.9, seed=1)
    kept = len(sift(out))
    assert abs(kept / n - 0.5) <= 0.02
    same = PolarizationOutcomes(out.alice_basis, out.alice_bit, out.alice_basis, out.bob_bit)
    assert len(sift(same)) == n


def test_perfect_visibility_gives_identical_streams():
    s = sift(polarization_outcomes(10_000, 1.0, seed=2))
    assert np.array_equal(s.alice, s.bob)


def test_qber_at_visibility_0873():
    s = sift(polarization_outcomes(400_000, 0.873, seed=3))
    est = estimate_qber(s, 0.1, seed=4)
    assert est.qber == pytest.approx(0.0635, abs=0.005)
    assert len(est.remaining) == len(s) - est.sample_size


def test_qber_limits():
    bits = np.random.default_rng(5).integers(0, 2, 20_000, dtype=np.uint8)
    assert estimate_qber(SiftedKey(bits, bits.copy()), 0.1, seed=1).qber == 0
    other = np.random.default_rng(6).integers(0, 2, 20_000, dtype=np.uint8)
    assert estimate_qber(SiftedKey(bits, other), 0.5, seed=1).qber == pytest.approx(0.5, abs=0.02)
    with pytest.raises(InvalidParameter):
        estimate_qber(SiftedKey(bits[:3], bits[:3]), 0.1)
    with pytest.raises(InvalidParameter):
        estimate_qber(SiftedKey(bits, bits), 0.0)


def test_entropy_bound_root():
    root = optimize.brentq(lambda q: 1 - 2 * binary_entropy(q), 0.01, 0.2)
    assert root == pytest.approx(0.110028, abs=1e-5)
    assert model_key_yield(10_000, 0.111, 1.0) == 0
    assert model_key_yield(10_000, 0.25, 1.0) == 0
    assert model_key_yield(10_000, 0.109, 1.0) > 0


def test_yield_limits():
    assert model_key_yield(12_345, 0.0, 1.0) == 12_345
    assert model_key_yield(1000, 0.05, 0.5) == math.floor(0.5 * 1000 * (1 - 2 * binary_entropy(0.05)))
    with pytest.raises(InvalidParameter):
        model_key_yield(10, 0.0, 0.0)


def test_calibration_hits_target_on_average():
    f = calibrate_yield_factor(664, 1e4, 4.0, 0.873)
    gross = [run_qkd_session(s, 40_000, 0.873, f, 4.0, seed=s).report.gross_rate for s in range(20)]
    assert np.mean(gross) == pytest.approx(664, rel=0.05)
    with pytest.raises(InvalidParameter):
        calibrate_yield_factor(1e9, 1e4, 4.0, 0.873)


def test_session_report_accounting(tmp_path):
    r = SessionReport(0, 18_000, 0.064, 2656, 1405, 4.0)
    assert r.net_rate == (2656 - 1405) / 4 == 312.75
    write_sessions_csv(tmp_path / "s.csv", [r])
    assert (tmp_path / "s.csv").read_text().splitlines()[1] == "0,2656,1405,312.750000,0.064000"


def test_session_key_length():
    q = run_qkd_session(3, 40_000, 0.873, 0.5, 4.0, seed=9)
    assert len(q.key) == q.report.gross_key_bits
    assert set(q.key) <= {"0", "1"}
