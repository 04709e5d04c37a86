"""Key reservoirs, the single-use ledger, budget arithmetic and fallback policy.

Three reservoirs exist: QKD keys produced by earlier sessions, the
pre-shared key (PSK), and a fixed post-quantum seed used for Ascon. QKD and
PSK bits are handed out through monotone cursors, and every draw is
recorded in an append-only ledger.
"""

import copy
import csv
from dataclasses import dataclass
from enum import Enum
import logging
import math
from pathlib import Path

import numpy as np

from .bits import random_bits
from .errors import InvalidParameter, PoolExhausted

log = logging.getLogger(__name__)


class Pool(str, Enum):
    QKD = "qkd"
    PSK = "psk"

    def __str__(self):
        return self.value


class Route(str, Enum):
    """Outcome of the fallback policy for one purpose."""

    QKD = "qkd"
    PSK = "psk"
    FAIL = "purpose-fails"
    PQC_ONLY = "pqc-only"

    def __str__(self):
        return self.value


# purposes, in the order a session draws them
RHO_OTP = "rho-otp"
T1_OTP = "t1-otp"
MAC_K2 = "mac-k2"
AES_SEED = "aes-seed"
DIFF_OTP = "diff-tag-otp"
IS_OTP = "is-otp"
MAC_K1 = "mac-k1"

TIMING_PURPOSES = frozenset({T1_OTP, DIFF_OTP})
PSK_PURPOSES = frozenset({IS_OTP, MAC_K1})


def resolve_fallback(purpose, qkd_available, psk_available, n_bits=1):
    """Pick the reservoir for a draw of ``n_bits`` under the fallback policy.

    QKD-first purposes fall back to the PSK, except the one-time pads over
    timing data, which fail instead. PSK purposes fall back to QKD. With
    neither reservoir able to serve, the session downgrades to PQC-only.
    """
    qkd_ok = qkd_available >= n_bits
    psk_ok = psk_available >= n_bits
    if purpose in PSK_PURPOSES:
        if psk_ok:
            return Route.PSK
        return Route.QKD if qkd_ok else Route.PQC_ONLY
    if qkd_ok:
        return Route.QKD
    if purpose in TIMING_PURPOSES:
        return Route.FAIL if psk_ok else Route.PQC_ONLY
    return Route.PSK if psk_ok else Route.PQC_ONLY


@dataclass(frozen=True)
class BudgetParams:
    k: int = 6
    b: int = 10
    l: int = 61
    k_aes: int = 256
    k_t1: int = 64
    T_run: float = 4.0
    r2: float = 0.0  # QKD key creation rate, bits/s

    def __post_init__(self):
        for name in ("k", "b", "l", "k_aes", "k_t1"):
            value = getattr(self, name)
            if int(value) != value or value < 0:
                raise InvalidParameter(f"{name} must be a non-negative integer, got {value}")
        if self.b < 1:
            raise InvalidParameter("b must be at least 1")
        if not self.T_run > 0:
            raise InvalidParameter("T_run must be positive")
        if self.r2 < 0:
            raise InvalidParameter("r2 must be non-negative")

    @property
    def budget_bits(self):
        """r2 * T_run as a whole number of key bits."""
        return math.floor(self.r2 * self.T_run + 1e-9)

    @property
    def fixed_bits(self):
        return self.k * 2**self.k + self.l + self.k_aes + self.k_t1


def budget_numerator(p):
    return p.budget_bits - p.fixed_bits


def is_budget_feasible(p):
    return budget_numerator(p) >= 0


def max_q(p):
    """Largest |Q| whose one-time pad fits the session's QKD budget."""
    num = budget_numerator(p)
    if num < 0:
        log.warning("QKD budget infeasible: %d bits short of fixed costs", -num)
        return 0
    return num // p.b


def usage_rate(p, q):
    if q < 0:
        raise InvalidParameter("|Q| must be non-negative")
    return (p.k * 2**p.k + p.b * q + p.l + p.k_aes + p.k_t1) / p.T_run


@dataclass(frozen=True)
class LedgerRecord:
    purpose: str
    pool: Pool
    offset: int
    length: int
    session: int


class KeyPool:
    """One party's view of the three reservoirs.

    Sender and receiver each hold a KeyPool built from the same material and
    draw in the same order, so their cursors stay in lockstep.

    QKD bits deposited during session s become visible from session s + 1.
    """

    def __init__(self, psk_bits="", pqc_seed=bytes(16)):
        self._bits = {Pool.QKD: "", Pool.PSK: psk_bits}
        self._cursor = {Pool.QKD: 0, Pool.PSK: 0}
        self._deposits = []  # (session, end offset), nondecreasing in both
        self.pqc_seed = bytes(pqc_seed)
        self.session = 0
        self.session_closed = False  # a message for this session was already accepted
        self.ledger = []
        self._k1 = None

    def copy(self):
        return copy.deepcopy(self)

    # sessions and deposits

    def begin_session(self, session_id):
        if session_id < self.session:
            raise InvalidParameter(f"session {session_id} precedes current session {self.session}")
        if session_id != self.session:
            self.session_closed = False
        self.session = int(session_id)

    def deposit_qkd(self, bits, session_id):
        if not bits:
            raise InvalidParameter("cannot deposit an empty key")
        if self._deposits and session_id < self._deposits[-1][0]:
            raise InvalidParameter("QKD deposits must arrive in session order")
        self._bits[Pool.QKD] += bits
        self._deposits.append((int(session_id), len(self._bits[Pool.QKD])))
        return self

    def deposited(self, pool):
        return len(self._bits[pool])

    def capacity(self, pool):
        """Bits that draws in the current session may reach."""
        if pool is Pool.PSK:
            return len(self._bits[Pool.PSK])
        end = 0
        for sid, stop in self._deposits:
            if sid < self.session:
                end = stop
        return end

    def available(self, pool):
        return max(0, self.capacity(pool) - self._cursor[pool])

    def remaining(self, pool):
        """Undrawn bits, including QKD bits not yet visible."""
        return len(self._bits[pool]) - self._cursor[pool]

    def cursor(self, pool):
        return self._cursor[pool]

    # draws

    def draw(self, pool, n_bits, purpose):
        pool = Pool(pool)
        if n_bits <= 0:
            raise InvalidParameter("a draw needs a positive number of bits")
        avail = self.available(pool)
        if n_bits > avail:
            fallback = resolve_fallback(
                purpose, self.available(Pool.QKD), self.available(Pool.PSK), n_bits
            )
            raise PoolExhausted(pool, purpose, n_bits, avail, fallback)
        start = self._cursor[pool]
        self._cursor[pool] = start + n_bits
        self.ledger.append(LedgerRecord(purpose, pool, start, n_bits, self.session))
        return self._bits[pool][start:start + n_bits]

    def discard_to(self, pool, offset, purpose="discarded"):
        """Advance a cursor without using the bits (resynchronizing two parties)."""
        pool = Pool(pool)
        n = offset - self._cursor[pool]
        if n < 0:
            raise InvalidParameter("cursors never move backwards")
        if n:
            self.draw(pool, n, purpose)

    def mac_k1(self):
        """The deployment-wide hash key, drawn once from the PSK on first use."""
        if self._k1 is None:
            route = resolve_fallback(MAC_K1, self.available(Pool.QKD), self.available(Pool.PSK), 61)
            if route is Route.PQC_ONLY:
                raise PoolExhausted(Pool.PSK, MAC_K1, 61, self.available(Pool.PSK), route)
            self._k1 = self.draw(Pool(route.value), 61, MAC_K1)
        return self._k1

    # accounting

    def drawn(self, pool, session=None):
        return sum(
            r.length
            for r in self.ledger
            if r.pool is pool and (session is None or r.session == session)
        )

    def write_ledger(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["purpose", "pool", "offset", "length", "session"])
            for r in self.ledger:
                w.writerow([r.purpose, r.pool.value, r.offset, r.length, r.session])

    @classmethod
    def from_files(cls, psk_path, pqc_path, qkd_path=None, qkd_session=0):
        pool = cls(load_bits_hex(psk_path), bytes.fromhex(Path(pqc_path).read_text().strip()))
        if qkd_path is not None:
            pool.deposit_qkd(load_bits_hex(qkd_path), qkd_session)
        return pool


def ledger_overlaps(records):
    """Pairs of records that hand out the same bits of one pool twice."""
    found = []
    for pool in (Pool.QKD, Pool.PSK):
        spans = sorted((r.offset, r.offset + r.length, r) for r in records if r.pool is pool)
        for (_, end, first), (start, _, second) in zip(spans, spans[1:]):
            if start < end:
                found.append((first, second))
    return found


def load_bits_hex(path):
    text = "".join(Path(path).read_text().split())
    if not text:
        return ""
    return format(int(text, 16), f"0{4 * len(text)}b")


def save_bits_hex(path, bits):
    if len(bits) % 4:
        raise InvalidParameter("hex files hold whole nibbles; pad to a multiple of 4 bits")
    Path(path).write_text(format(int(bits, 2), f"0{len(bits) // 4}x") + "\n" if bits else "\n")


def shared_pools(seed, psk_bits=4096, initial_qkd_bits=0):
    """Identical sender/receiver pools from a seeded generator."""
    rng = np.random.default_rng(seed)
    psk = random_bits(rng, psk_bits)
    pqc = rng.bytes(16)
    alice = KeyPool(psk, pqc)
    if initial_qkd_bits:
        # deposited "before" session 0 so the first session can use it
        alice.deposit_qkd(random_bits(rng, initial_qkd_bits), -1)
    return alice, alice.copy()


def align_pools(*pools):
    """Discard bits so every pool's cursors match the furthest one."""
    for pool in (Pool.QKD, Pool.PSK):
        target = max(p.cursor(pool) for p in pools)
        for p in pools:
            p.discard_to(pool, target)
