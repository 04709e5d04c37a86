"""Sealing a time-tag array into a SecureTimingMessage and opening it again.

Both parties derive the same key plan from identical pool state, draw in the
same order (rho*, t1*, k2, AES seed, Q pad, IS pad) and therefore read
identical key bits without exchanging anything but the message.
"""

from dataclasses import dataclass, replace
import hashlib
import logging

import numpy as np

from .bits import bits_to_int, bytes_to_bits, int_to_bits
from .codec import (
    DiffTagArray,
    decode_rho,
    deserialize_diffs,
    encode_rho,
    from_diffs,
    partition,
    sample_permutation,
    serialize_diffs,
    shuffle,
    to_diffs,
    unshuffle,
)
from .crypto import (
    MacKeys,
    cascade_decrypt,
    cascade_encrypt,
    decode_is,
    encode_is,
    otp,
    session_nonce,
    wc_mac,
    wc_verify,
)
from .errors import InvalidParameter, MacFailure, PoolExhausted, ProtocolError, ReplayDetected
from .keystore import (
    AES_SEED,
    DIFF_OTP,
    IS_OTP,
    MAC_K1,
    MAC_K2,
    PSK_PURPOSES,
    RHO_OTP,
    T1_OTP,
    BudgetParams,
    Pool,
    Route,
    max_q,
    resolve_fallback,
)
from .message import K_MAX, PI_BITS, T1_BITS, VERSION, SecureTimingMessage, encode_body

log = logging.getLogger(__name__)

DOMAIN_DIFFS = 0
DOMAIN_T1 = 1
IS_PADDING = "0" * (PI_BITS - 2)


@dataclass(frozen=True)
class SessionPlan:
    q: int
    routes: dict  # purpose -> Route, for every purpose with a nonzero draw
    sizes: dict  # purpose -> bits

    @property
    def downgraded(self):
        return Route.PQC_ONLY in self.routes.values()


@dataclass
class SessionKeys:
    k1: str
    rho_pad: str
    t1_pad: str  # None when t1 travels through the cascade instead
    k2: str
    aes_seed: bytes
    q_pad: str
    is_pad: str
    ascon_seed: bytes

    @property
    def mac_keys(self):
        return MacKeys.from_bits(self.k1, self.k2)


def _check_params(p):
    if p.l != 61:
        raise InvalidParameter("the MAC produces 61-bit tags; l must be 61")
    if p.k_aes != 256:
        raise InvalidParameter("the AES step is AES-256; k_aes must be 256")
    if p.k_t1 != T1_BITS:
        raise InvalidParameter("t1 is a 64-bit stamp; k_t1 must be 64")
    if p.k > K_MAX:
        raise InvalidParameter(f"k must be at most {K_MAX}")


def plan_session(pools, params, q_requested, n_diffs):
    """|Q| and the reservoir serving each purpose, from current pool state."""
    _k1(pools)  # drawn once per deployment, before the first session's keys
    avail_qkd = pools.available(Pool.QKD)
    avail_psk = pools.available(Pool.PSK)
    budget = replace(params, r2=avail_qkd / params.T_run)
    q = max(0, min(q_requested, max_q(budget), n_diffs))
    sizes = {
        RHO_OTP: params.k * (1 << params.k),
        T1_OTP: params.k_t1,
        MAC_K2: params.l,
        AES_SEED: params.k_aes,
        DIFF_OTP: params.b * q,
        IS_OTP: PI_BITS,
    }
    routes = {}
    for purpose, n in sizes.items():
        if n == 0:
            continue
        route = resolve_fallback(purpose, avail_qkd, avail_psk, n)
        if route is Route.QKD:
            avail_qkd -= n
        elif route is Route.PSK:
            avail_psk -= n
        routes[purpose] = route
    if q and routes[DIFF_OTP] is not Route.QKD:
        q = 0
        sizes[DIFF_OTP] = 0
        del routes[DIFF_OTP]
    for purpose, route in routes.items():
        preferred = Route.PSK if purpose in PSK_PURPOSES else Route.QKD
        if route is not preferred:
            log.warning("session %d: %s served by %s", pools.session, purpose, route)
    return SessionPlan(q, routes, sizes)


def _pqc_bits(seed, session, purpose, n):
    digest = hashlib.shake_256(
        b"qstt-pqc|" + seed + session.to_bytes(4, "big") + purpose.encode()
    ).digest((n + 7) // 8)
    return bytes_to_bits(digest, n)


def _k1(pools):
    try:
        return pools.mac_k1()
    except PoolExhausted:
        return _pqc_bits(pools.pqc_seed, 0, MAC_K1, 61)


def draw_session_keys(pools, plan):
    drawn = {}
    for purpose, n in plan.sizes.items():
        route = plan.routes.get(purpose)
        if n == 0:
            drawn[purpose] = ""
        elif route in (Route.QKD, Route.PSK):
            drawn[purpose] = pools.draw(Pool(route.value), n, purpose)
        elif route is Route.PQC_ONLY:
            drawn[purpose] = _pqc_bits(pools.pqc_seed, pools.session, purpose, n)
        else:
            drawn[purpose] = None
    aes = drawn[AES_SEED]
    return SessionKeys(
        k1=_k1(pools),
        rho_pad=drawn[RHO_OTP],
        t1_pad=drawn[T1_OTP],
        k2=drawn[MAC_K2],
        aes_seed=int(aes, 2).to_bytes(len(aes) // 8, "big"),
        q_pad=drawn[DIFF_OTP],
        is_pad=drawn[IS_OTP],
        ascon_seed=pools.pqc_seed,
    )


def mac_input(msg, payload_only=False):
    """Bits the MAC covers: the whole wire body, or only (t1*, dt_enc, dt_enc_is)."""
    if payload_only:
        return msg.t1_star + msg.dt_enc + msg.dt_enc_is
    body = msg.raw[:-8] if msg.raw is not None else encode_body(msg)
    return bytes_to_bits(body)


def encrypt_timing(tags, pools, params, seed, q=None, codec_tick=1000, strict_mac=False):
    """Seal Alice's time-tag array for the current session of ``pools``.

    ``q`` is the requested |Q| (default: as many as the budget allows); the
    QKD budget r2 T_run is whatever the pool can serve this session, so
    ``params.r2`` is ignored.
    """
    _check_params(params)
    if abs(tags.duration - params.T_run) > 1e-9:
        raise InvalidParameter(f"tag array covers {tags.duration} s but T_run is {params.T_run} s")
    sid = pools.session
    d = to_diffs(tags, codec_tick, params.b)
    n = len(d.diffs) + 1

    plan = plan_session(pools, params, n - 1 if q is None else q, n - 1)
    keys = draw_session_keys(pools, plan)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rho_rng, q_rng, is_rng = (np.random.default_rng(s) for s in ss.spawn(3))

    t1_bits = int_to_bits(d.t1, T1_BITS)
    parts = partition(d.diffs, params.k)
    rho = sample_permutation(params.k, rho_rng)
    rho_star = otp(encode_rho(rho), keys.rho_pad)
    shuffled = shuffle(parts, rho)

    q_indices = tuple(sorted(int(i) for i in q_rng.choice(n - 1, size=plan.q, replace=False)))
    in_q = set(q_indices)
    dt_enc = otp(serialize_diffs([shuffled[i] for i in q_indices], params.b), keys.q_pad)

    seq = decode_is(format(int(is_rng.integers(4)), "02b"))
    pi = otp(encode_is(seq) + IS_PADDING, keys.is_pad)
    rest = [d_ for i, d_ in enumerate(shuffled) if i not in in_q]
    dt_enc_is = cascade_encrypt(
        serialize_diffs(rest, params.b), seq, keys.aes_seed, keys.ascon_seed,
        session_nonce(sid, DOMAIN_DIFFS),
    )
    if keys.t1_pad is not None:
        t1_star = otp(t1_bits, keys.t1_pad)
    else:
        t1_star = cascade_encrypt(
            t1_bits, seq, keys.aes_seed, keys.ascon_seed, session_nonce(sid, DOMAIN_T1)
        )

    msg = SecureTimingMessage(
        session_id=sid, n=n, k=params.k, b=params.b, codec_tick=int(codec_tick),
        t_run_us=round(params.T_run * 1e6), t1_star=t1_star, rho_star=rho_star,
        q_indices=q_indices, pi=pi, dt_enc=dt_enc, dt_enc_is=dt_enc_is, version=VERSION,
    )
    msg.mac_tag = wc_mac(mac_input(msg, strict_mac), keys.mac_keys)
    return msg


def receiver_plan(msg, pools, l=61, k_aes=256, k_t1=T1_BITS):
    params = BudgetParams(k=msg.k, b=msg.b, l=l, k_aes=k_aes, k_t1=k_t1, T_run=msg.t_run)
    plan = plan_session(pools, params, msg.q_count, msg.n - 1)
    if plan.q != msg.q_count:
        raise ProtocolError(
            f"message claims |Q| = {msg.q_count} but the key budget allows {plan.q}"
        )
    return plan


def decrypt_timing(msg, pools, strict_mac=False):
    """Verify the MAC, then undo every layer; nothing is decrypted on failure."""
    msg.check_lengths()
    if msg.session_id != pools.session:
        raise ReplayDetected(f"message for session {msg.session_id}, receiver is in {pools.session}")
    if pools.session_closed:
        raise ReplayDetected(f"session {msg.session_id} already delivered its message")
    plan = receiver_plan(msg, pools)
    keys = draw_session_keys(pools, plan)
    if not wc_verify(mac_input(msg, strict_mac), msg.mac_tag, keys.mac_keys):
        raise MacFailure(f"MAC verification failed for session {msg.session_id}")
    tags = open_message(msg, keys)
    pools.session_closed = True
    return tags


def open_message(msg, keys):
    """Undo the encryption layers with already-drawn keys (no MAC check)."""
    n_diffs = msg.n - 1
    q_indices = msg.q_indices
    if any(i >= n_diffs for i in q_indices) or any(
        a >= b for a, b in zip(q_indices, q_indices[1:])
    ):
        raise ProtocolError("Q must be strictly increasing indices below n - 1")

    code = otp(msg.pi, keys.is_pad)
    if code[2:] != IS_PADDING:
        raise ProtocolError("instruction-sequence padding is not zero")
    seq = decode_is(code[:2])

    rest = deserialize_diffs(
        cascade_decrypt(
            msg.dt_enc_is, seq, keys.aes_seed, keys.ascon_seed,
            session_nonce(msg.session_id, DOMAIN_DIFFS),
        ),
        msg.b,
    )
    q_values = deserialize_diffs(otp(msg.dt_enc, keys.q_pad), msg.b)
    shuffled = []
    it_q, it_rest = iter(q_values), iter(rest)
    in_q = set(q_indices)
    for i in range(n_diffs):
        shuffled.append(next(it_q) if i in in_q else next(it_rest))

    rho = decode_rho(otp(msg.rho_star, keys.rho_pad), msg.k)
    diffs = unshuffle(shuffled, rho)

    if keys.t1_pad is not None:
        t1_bits = otp(msg.t1_star, keys.t1_pad)
    else:
        t1_bits = cascade_decrypt(
            msg.t1_star, seq, keys.aes_seed, keys.ascon_seed,
            session_nonce(msg.session_id, DOMAIN_T1),
        )
    d = DiffTagArray(bits_to_int(t1_bits, signed=True), tuple(diffs), msg.codec_tick, msg.b)
    return from_diffs(d, duration=msg.t_run)
