"""Command-line scenario runner."""

import argparse
import logging
import os
import sys

from .errors import ConfigError, QSTTError
from .scenario import Attack, ScenarioConfig, load_config, run_scenario, validate_config


def build_parser():
    p = argparse.ArgumentParser(
        prog="qstt",
        description="Simulate entangled-photon time transfer with encrypted timing data "
                    "and write histogram, session and ledger CSVs.",
    )
    p.add_argument("--config", help="TOML scenario file (defaults are used for missing keys)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--sessions", type=int, help="number of sessions")
    p.add_argument("--attack", help="none | tamper:BIT | replay | delay:PS | drop-mac")
    p.add_argument("--out", help="output directory")
    p.add_argument("--strict-paper-mac", dest="payload_only_mac", action="store_true", default=None,
                   help="MAC only t1*, dt_enc and dt_enc_is instead of the whole message")
    p.add_argument("--validate-only", action="store_true",
                   help="check the configuration and exit")
    p.add_argument("--print-config", action="store_true",
                   help="print the effective configuration as TOML and exit")
    return p


def _setup_logging():
    level = os.environ.get("QSTT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else ScenarioConfig()
        for key in ("seed", "sessions", "out", "payload_only_mac"):
            value = getattr(args, key)
            if value is not None:
                setattr(cfg, key, value)
        if args.attack is not None:
            Attack.parse(args.attack)
            cfg.attack = args.attack
    except ConfigError as exc:
        where = f"{args.config}: " if args.config else ""
        print(f"config error: {where}{exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2

    if args.print_config:
        print(cfg.to_toml())
        return 0
    problems = validate_config(cfg)
    for _, msg in problems:
        print(f"config error: {msg}", file=sys.stderr)
    if problems:
        return 2
    if args.validate_only:
        print("configuration ok")
        return 0

    try:
        status, summary = run_scenario(cfg)
    except QSTTError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for key, value in summary.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        print(f"{key}: {value}")
    print("status:", "ok" if status == 0 else "FAILED")
    return status


if __name__ == "__main__":
    sys.exit(main())
