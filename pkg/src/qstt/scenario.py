"""Scenario configuration, pre-flight validation and the end-to-end session runner."""

import csv
from dataclasses import asdict, dataclass, field, fields
import logging
import math
from pathlib import Path
import re

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import (
    AuthenticationError,
    ConfigError,
    DriftEstimationError,
    NoLock,
    ProtocolError,
    QSTTError,
    WireError,
)
from .keystore import BudgetParams, Pool, align_pools, ledger_overlaps, shared_pools, usage_rate
from .message import K_MAX, wire_decode, wire_encode
from .protocol import decrypt_timing, encrypt_timing
from .qkdsim import calibrate_yield_factor, run_qkd_session, write_sessions_csv
from .sync import (
    apply_correction,
    coarse_align,
    estimate_drift,
    fine_align,
    write_histogram_rows,
)
from .timebase import PS_PER_S, ChannelModel, ClockModel, TimeTagArray, detect, generate_pairs

log = logging.getLogger(__name__)

ATTACKS = ("none", "tamper", "replay", "delay", "drop-mac")
DETECTING_ATTACKS = ("tamper", "replay", "drop-mac")


@dataclass(frozen=True)
class Attack:
    kind: str = "none"
    param: int = 0

    @classmethod
    def parse(cls, text):
        kind, _, param = str(text).partition(":")
        kind = kind.strip().lower()
        if kind not in ATTACKS:
            raise ConfigError(f"unknown attack {kind!r}; choose from {', '.join(ATTACKS)}")
        if kind in ("tamper", "delay"):
            if not param:
                raise ConfigError(f"attack {kind} needs a parameter, e.g. {kind}:100")
            try:
                value = int(float(param))
            except ValueError:
                raise ConfigError(f"attack parameter {param!r} is not a number") from None
            if kind == "tamper" and value < 0:
                raise ConfigError("tamper bit index must be non-negative")
            return cls(kind, value)
        if param:
            raise ConfigError(f"attack {kind} takes no parameter")
        return cls(kind)

    def __str__(self):
        return f"{self.kind}:{self.param}" if self.kind in ("tamper", "delay") else self.kind


# section of the config file each field lives in
SECTIONS = {
    "run": ("seed", "sessions", "T_run", "attack", "out", "payload_only_mac"),
    "timebase": (
        "pair_rate", "loss_db", "dark_count_rate", "source_jitter_ps", "detector_jitter_ps",
        "tagger_jitter_ps", "tagger_resolution_ps", "path_length_m", "offset_ps",
        "drift_ps_per_s",
    ),
    "keystore": ("psk_bits", "initial_qkd_bits", "k", "b", "q", "l", "k_aes", "k_t1"),
    "codec": ("codec_tick_ps",),
    "sync": ("max_offset_ps", "coarse_bin_ps", "window_ps", "bin_width_ps", "block_length_s"),
    "qkd": (
        "visibility", "coincidence_rate", "target_gross_rate", "yield_factor",
        "sample_fraction",
    ),
}


@dataclass
class ScenarioConfig:
    # run
    seed: int = 1
    sessions: int = 10
    T_run: float = 4.0
    attack: str = "none"
    out: str = "qstt-out"
    payload_only_mac: bool = False
    # timebase; jitters give a coincidence peak sigma of about 0.69 ns with a 1 ns tagger
    pair_rate: float = 1.0e4
    loss_db: float = 10.3
    dark_count_rate: float = 100.0
    source_jitter_ps: float = 0.3
    detector_jitter_ps: float = 345.0
    tagger_jitter_ps: float = 189.0
    tagger_resolution_ps: int = 1000
    path_length_m: float = 0.0
    offset_ps: float = 10_000.0
    drift_ps_per_s: float = 250.0
    # keystore
    psk_bits: int = 8192
    initial_qkd_bits: int = 2656
    k: int = 6
    b: int = 24
    q: int = 64
    l: int = 61
    k_aes: int = 256
    k_t1: int = 64
    # codec
    codec_tick_ps: int = 1000
    # sync
    max_offset_ps: int = 1_000_000_000
    coarse_bin_ps: int = 100_000
    window_ps: int = 50_000
    bin_width_ps: int = 500
    block_length_s: float = 4.0
    # qkd
    visibility: float = 0.873
    coincidence_rate: float = 1.0e4
    target_gross_rate: float = 664.0
    yield_factor: object = "auto"
    sample_fraction: float = 0.1
    # line of each key in the source file, for error messages
    lines: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def attack_spec(self):
        return Attack.parse(self.attack)

    @property
    def duration(self):
        return self.sessions * self.T_run

    def budget_params(self, r2=0.0):
        return BudgetParams(
            k=self.k, b=self.b, l=self.l, k_aes=self.k_aes, k_t1=self.k_t1, T_run=self.T_run,
            r2=r2,
        )

    def channel(self):
        return ChannelModel.from_loss_db(
            self.loss_db,
            path_length=self.path_length_m,
            dark_count_rate=self.dark_count_rate,
            detector_jitter_sigma=self.detector_jitter_ps,
            tagger_jitter_sigma=self.tagger_jitter_ps,
            tagger_resolution=self.tagger_resolution_ps,
        )

    def resolved_yield_factor(self):
        if self.yield_factor == "auto":
            return calibrate_yield_factor(
                self.target_gross_rate, self.coincidence_rate, self.T_run, self.visibility,
                self.sample_fraction,
            )
        return float(self.yield_factor)

    def to_toml(self):
        out = []
        values = asdict(self)
        for section, keys in SECTIONS.items():
            out.append(f"[{section}]")
            for key in keys:
                v = values[key]
                if isinstance(v, bool):
                    text = "true" if v else "false"
                elif isinstance(v, str):
                    text = f'"{v}"'
                else:
                    text = repr(v)
                out.append(f"{key} = {text}")
            out.append("")
        return "\n".join(out)


_FIELD_TYPES = {f.name: f.type for f in fields(ScenarioConfig)}


def _key_line(text, section, key):
    current = None
    for i, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
        elif current == section and re.match(rf"{re.escape(key)}\s*=", line):
            return i
    return None


def _coerce(name, value, line):
    kind = _FIELD_TYPES[name]
    if name == "yield_factor":
        if value == "auto" or (isinstance(value, (int, float)) and not isinstance(value, bool)):
            return value
        raise ConfigError(f"yield_factor must be a number or \"auto\", got {value!r}", line)
    if kind in ("bool", bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false, got {value!r}", line)
        return value
    if kind in ("int", int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{name} must be an integer, got {value!r}", line)
        return value
    if kind in ("float", float):
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"{name} must be a number, got {value!r}", line)
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{name} must be a string, got {value!r}", line)
    return value


def parse_config(text):
    """ScenarioConfig from TOML text; errors carry the offending line number."""
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"malformed config: {exc}", int(m.group(1)) if m else None) from None
    values, lines = {}, {}
    for section, table in data.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]", _key_line_section(text, section))
        if not isinstance(table, dict):
            raise ConfigError(f"{section} must be a [section]", None)
        for key, value in table.items():
            line = _key_line(text, section, key)
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]", line)
            values[key] = _coerce(key, value, line)
            lines[key] = line
    cfg = ScenarioConfig(**values, lines=lines)
    try:
        cfg.attack_spec
    except ConfigError as exc:
        raise ConfigError(str(exc), lines.get("attack")) from None
    return cfg


def _key_line_section(text, section):
    for i, raw in enumerate(text.splitlines(), 1):
        if raw.strip().startswith(f"[{section}]"):
            return i
    return None


def load_config(path):
    return parse_config(Path(path).read_text())


def detection_rate(cfg):
    return cfg.pair_rate * 10 ** (-cfg.loss_db / 10) + cfg.dark_count_rate


def min_safe_b(cfg, quantile=0.999):
    """Smallest b holding the given quantile of Poisson inter-arrival gaps."""
    rate = detection_rate(cfg)
    gap_ps = -math.log(1 - quantile) / rate * PS_PER_S
    return max(1, math.ceil(gap_ps / cfg.codec_tick_ps).bit_length())


def validate_config(cfg):
    """Pre-flight problems as (key, message) pairs; empty when the config is usable."""
    problems = []

    def bad(key, msg):
        line = cfg.lines.get(key)
        problems.append((key, f"line {line}: {msg}" if line else msg))

    positive = ("sessions", "T_run", "pair_rate", "tagger_resolution_ps", "codec_tick_ps",
                "bin_width_ps", "coarse_bin_ps", "window_ps", "max_offset_ps",
                "block_length_s", "coincidence_rate", "b")
    for key in positive:
        if not getattr(cfg, key) > 0:
            bad(key, f"{key} must be positive, got {getattr(cfg, key)}")
    for key in ("loss_db", "dark_count_rate", "source_jitter_ps", "detector_jitter_ps",
                "tagger_jitter_ps", "path_length_m", "psk_bits", "initial_qkd_bits", "q", "k"):
        if getattr(cfg, key) < 0:
            bad(key, f"{key} must be non-negative, got {getattr(cfg, key)}")
    if problems:
        return problems

    try:
        cfg.attack_spec
    except ConfigError as exc:
        bad("attack", str(exc))
    if cfg.k > K_MAX:
        bad("k", f"k = {cfg.k} exceeds the wire limit of {K_MAX}")
    for key, want in (("l", 61), ("k_aes", 256), ("k_t1", 64)):
        if getattr(cfg, key) != want:
            bad(key, f"{key} must be {want}, got {getattr(cfg, key)}")
    if not 0 <= cfg.visibility <= 1:
        bad("visibility", f"visibility {cfg.visibility} outside [0, 1]")
    if not 0 < cfg.sample_fraction <= 1:
        bad("sample_fraction", f"sample fraction {cfg.sample_fraction} outside (0, 1]")

    if cfg.tagger_resolution_ps % cfg.codec_tick_ps:
        bad("codec_tick_ps",
            f"codec tick {cfg.codec_tick_ps} ps does not divide the tagger resolution "
            f"{cfg.tagger_resolution_ps} ps")
    need_b = min_safe_b(cfg)
    if cfg.b < need_b:
        bad("b", f"b = {cfg.b} cannot hold the 99.9th-percentile gap at "
                 f"{detection_rate(cfg):.4g} detections/s and a {cfg.codec_tick_ps} ps tick; "
                 f"minimal b is {need_b}")

    try:
        gross_rate = cfg.target_gross_rate if cfg.yield_factor == "auto" else None
        yf = cfg.resolved_yield_factor()
        if gross_rate is None:
            from .qkdsim import secret_fraction

            gross_rate = (yf * cfg.coincidence_rate / 2 * (1 - cfg.sample_fraction)
                          * secret_fraction((1 - cfg.visibility) / 2))
        r1 = usage_rate(cfg.budget_params(), cfg.q)
        if r1 > gross_rate:
            bad("q", f"key usage rate r1 = {r1:.2f} bits/s exceeds the QKD creation rate "
                     f"r2 = {gross_rate:.2f} bits/s")
    except QSTTError as exc:
        bad("yield_factor", str(exc))
    if cfg.initial_qkd_bits < cfg.budget_params().fixed_bits + cfg.b * cfg.q:
        bad("initial_qkd_bits",
            f"initial QKD deposit {cfg.initial_qkd_bits} bits cannot pay for the first session "
            f"({cfg.budget_params().fixed_bits + cfg.b * cfg.q} bits)")
    if cfg.psk_bits < 61 + 8 * cfg.sessions:
        bad("psk_bits", f"PSK of {cfg.psk_bits} bits is short of {61 + 8 * cfg.sessions} "
                        f"needed for {cfg.sessions} sessions")

    if cfg.bin_width_ps > cfg.window_ps:
        bad("bin_width_ps", "fine bin is wider than the fine window")
    if cfg.coarse_bin_ps > cfg.max_offset_ps:
        bad("coarse_bin_ps", "coarse bin is wider than the coarse scan range")
    if cfg.window_ps < cfg.coarse_bin_ps / 2:
        bad("window_ps", f"fine window +/-{cfg.window_ps} ps does not cover half a coarse bin "
                         f"({cfg.coarse_bin_ps / 2:g} ps)")
    if cfg.window_ps > cfg.max_offset_ps:
        bad("window_ps", "fine window exceeds the coarse scan range")
    if cfg.duration // cfg.block_length_s < 4:
        bad("block_length_s", f"{cfg.duration:g} s of data holds fewer than 4 drift blocks "
                              f"of {cfg.block_length_s:g} s")
    return problems


# ---------------------------------------------------------------- running


def deliver(wire, attack, previous):
    """What reaches Bob on the classical channel: a list of byte strings."""
    if attack.kind == "tamper":
        data = bytearray(wire)
        bit = attack.param % (8 * len(data))
        data[bit // 8] ^= 0x80 >> (bit % 8)
        return [bytes(data)]
    if attack.kind == "drop-mac":
        return [wire[:-8]]
    if attack.kind == "replay":
        # the genuine message goes through, then an earlier one is injected again
        return [wire, previous if previous is not None else wire]
    return [wire]


@dataclass
class SessionOutcome:
    session: int
    delivered: int = 0
    accepted: int = 0
    rejected: int = 0
    reasons: list = field(default_factory=list)
    roundtrip_ok: bool = True
    consumed_qkd: int = 0
    available_qkd: int = 0
    q: int = 0


def _receive(data, bob, strict):
    try:
        msg = wire_decode(data)
        return decrypt_timing(msg, bob, strict_mac=strict), None
    except WireError as exc:
        return None, f"wire:{exc.code}"
    except AuthenticationError as exc:
        return None, type(exc).__name__
    except (ProtocolError, QSTTError) as exc:
        return None, type(exc).__name__


def simulate_stations(cfg, seed_seq):
    pair_seed, a_seed, b_seed = seed_seq.spawn(3)
    attack = cfg.attack_spec
    stream = generate_pairs(cfg.pair_rate, cfg.duration, pair_seed, cfg.source_jitter_ps)
    channel = cfg.channel()
    a = detect(stream, channel, ClockModel(), a_seed)
    delay = attack.param if attack.kind == "delay" else 0.0
    b = detect(stream, channel, ClockModel(cfg.offset_ps, cfg.drift_ps_per_s), b_seed,
               extra_delay=delay)
    return a, b


def run_scenario(cfg, out=None):
    """Run every session and write the artifacts; returns (exit status, summary dict)."""
    problems = validate_config(cfg)
    if problems:
        raise ConfigError("; ".join(msg for _, msg in problems))
    out = Path(out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    attack = cfg.attack_spec
    root = np.random.SeedSequence(cfg.seed)
    sim_seed, pool_seed, qkd_seed, proto_seed = root.spawn(4)
    yf = cfg.resolved_yield_factor()

    a, b = simulate_stations(cfg, sim_seed)
    alice, bob = shared_pools(
        int(pool_seed.generate_state(1)[0]), cfg.psk_bits, cfg.initial_qkd_bits
    )
    q_rng = np.random.default_rng(qkd_seed)
    proto_seeds = proto_seed.spawn(cfg.sessions)
    step = int(round(cfg.T_run * PS_PER_S))

    reports, outcomes, received = [], [], []
    previous = None
    violations = []
    for s in range(cfg.sessions):
        for p in (alice, bob):
            p.begin_session(s)
        oc = SessionOutcome(s, available_qkd=alice.available(Pool.QKD))
        tags = a.window(s * step, (s + 1) * step)
        msg = encrypt_timing(
            tags, alice, cfg.budget_params(), proto_seeds[s], q=cfg.q,
            codec_tick=cfg.codec_tick_ps, strict_mac=cfg.payload_only_mac,
        )
        oc.q = msg.q_count
        wire = wire_encode(msg)
        for data in deliver(wire, attack, previous):
            oc.delivered += 1
            got, reason = _receive(data, bob, cfg.payload_only_mac)
            if got is None:
                oc.rejected += 1
                oc.reasons.append(reason)
                continue
            oc.accepted += 1
            if got != tags:
                oc.roundtrip_ok = False
            received.append(got)
        previous = wire
        align_pools(alice, bob)

        n_coinc = int(q_rng.poisson(cfg.coincidence_rate * cfg.T_run))
        qkd = run_qkd_session(
            s, n_coinc, cfg.visibility, yf, cfg.T_run, q_rng.integers(2**63), cfg.sample_fraction
        )
        if qkd.key:
            for p in (alice, bob):
                p.deposit_qkd(qkd.key, s)
        oc.consumed_qkd = alice.drawn(Pool.QKD, session=s)
        qkd.report.consumed_bits = oc.consumed_qkd
        reports.append(qkd.report)
        outcomes.append(oc)

        if not oc.roundtrip_ok:
            violations.append(f"session {s}: decrypted tags differ from the original")
        if oc.consumed_qkd > oc.available_qkd:
            violations.append(f"session {s}: consumed {oc.consumed_qkd} QKD bits, "
                              f"only {oc.available_qkd} available")
        if attack.kind in DETECTING_ATTACKS:
            expected_rejections = 1
            if oc.rejected < expected_rejections:
                violations.append(f"session {s}: {attack.kind} attack was not detected")
        elif oc.rejected:
            violations.append(f"session {s}: genuine message rejected ({', '.join(oc.reasons)})")

    ledger_ok = not ledger_overlaps(alice.ledger) and not ledger_overlaps(bob.ledger)
    if not ledger_ok:
        violations.append("ledger records overlap: a key range was used twice")
    alice.write_ledger(out / "ledger.csv")
    write_sessions_csv(out / "sessions.csv", reports)

    summary = {
        "seed": cfg.seed,
        "sessions": cfg.sessions,
        "attack": str(attack),
        "alice_tags": len(a),
        "bob_tags": len(b),
        "messages_delivered": sum(o.delivered for o in outcomes),
        "messages_accepted": sum(o.accepted for o in outcomes),
        "messages_rejected": sum(o.rejected for o in outcomes),
        "rejection_reasons": ",".join(sorted({r for o in outcomes for r in o.reasons})) or "-",
        "mean_gross_rate": float(np.mean([r.gross_rate for r in reports])),
        "mean_net_rate": float(np.mean([r.net_rate for r in reports])),
        "mean_qber": float(np.mean([r.qber for r in reports])),
        "qkd_bits_per_session": ",".join(str(o.consumed_qkd) for o in outcomes),
        "ledger_disjoint": ledger_ok,
    }
    if attack.kind in DETECTING_ATTACKS:
        detected = sum(1 for o in outcomes if o.rejected)
        summary["attack_detection_rate"] = detected / cfg.sessions

    sync_summary = _synchronize(cfg, a, b, received, attack, out, violations)
    summary.update(sync_summary)
    summary["invariant_violations"] = len(violations)
    _write_summary(out / "summary.txt", summary, violations)
    for v in violations:
        log.error(v)
    return (0 if not violations else 1), summary


def _synchronize(cfg, a, b, received, attack, out, violations):
    """Sync Bob's record against the Alice tags he could decrypt."""
    result = {}
    hist_path = out / "histogram.csv"
    if not received:
        hist_path.write_text("delay_ps,counts,phase\n")
        result["sync"] = "skipped: no authenticated timing data"
        if attack.kind not in DETECTING_ATTACKS:
            violations.append("no session delivered timing data to synchronize")
        return result
    alice_tags = TimeTagArray(
        np.unique(np.concatenate([r.tags for r in received])), cfg.duration
    )
    try:
        candidate = coarse_align(alice_tags, b, cfg.max_offset_ps, cfg.coarse_bin_ps)
        pre = fine_align(alice_tags, b, candidate, cfg.window_ps, cfg.bin_width_ps)
        drift = estimate_drift(
            alice_tags, b, cfg.block_length_s, candidate, cfg.window_ps, cfg.bin_width_ps
        )
        corrected = apply_correction(b, drift)
        post = fine_align(alice_tags, corrected, 0.0, cfg.window_ps, cfg.bin_width_ps)
    except (NoLock, DriftEstimationError) as exc:
        hist_path.write_text("delay_ps,counts,phase\n")
        result["sync"] = f"failed: {exc}"
        violations.append(f"synchronization failed: {exc}")
        return result

    with open(hist_path, "w", newline="") as fh:
        w = csv.writer(fh)
        write_histogram_rows(w, pre.histogram, "pre", header=True)
        write_histogram_rows(w, post.histogram, "post")

    residual = post.offset
    bound = post.residual_bound() if post.reliable else float("nan")
    half_bin = cfg.bin_width_ps / 2
    result.update({
        "sync": "ok",
        "pre_peak_delay_ps": pre.histogram.peak_delay,
        "pre_offset_ps": pre.offset,
        "offset_ps": drift.offset,
        "offset_stderr_ps": drift.offset_stderr,
        "drift_ps_per_s": drift.drift,
        "drift_stderr_ps_per_s": drift.drift_stderr,
        "drift_degraded": drift.degraded,
        "sigma_ps": post.sigma,
        "peak_count": post.peak_count,
        "accidental_floor": post.accidental_floor,
        "snr": post.snr,
        "post_peak_delay_ps": post.histogram.peak_delay,
        "residual_offset_ps": residual,
        "residual_bound_ps": bound,
    })
    if not post.reliable:
        violations.append("no reliable coincidence peak after correction")
    elif abs(post.histogram.peak_delay) > half_bin:
        violations.append(f"post-correction peak at {post.histogram.peak_delay} ps, not in the zero bin")
    elif abs(residual) > bound:
        violations.append(f"residual offset {residual:.1f} ps exceeds {bound:.1f} ps")
    if attack.kind == "delay":
        expected = cfg.offset_ps + attack.param
        result["expected_offset_ps"] = expected
        if abs(drift.offset - expected) > max(5 * drift.offset_stderr, half_bin):
            violations.append(
                f"recovered offset {drift.offset:.1f} ps does not reflect the "
                f"{attack.param} ps photon-path delay (expected {expected:.1f} ps)"
            )
    return result


def _write_summary(path, summary, violations):
    lines = []
    for key, value in summary.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        lines.append(f"{key}: {value}")
    lines.append("status: " + ("ok" if not violations else "FAILED"))
    lines.extend(f"violation: {v}" for v in violations)
    Path(path).write_text("\n".join(lines) + "\n")
