"""Command-line entry point: ``freqcert <subcommand> [options]``."""
import argparse
import csv
import logging
import os
import sys
import time

from . import harness, oracle
from .config import describe_keys, load_config
from .errors import ConfigError, FreqCertError

EXIT_OK, EXIT_USAGE, EXIT_ORACLE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for oracle failures here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _override(text):
    key, sep, value = text.partition("=")
    section, dot, name = key.strip().partition(".")
    if not (sep and dot and section and name):
        raise argparse.ArgumentTypeError(f"expected section.key=value, got {text!r}")
    return (section, name), value.strip()


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [section] key = value entries")
    common.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    common.add_argument("--out", help="output directory (overrides run.out)")
    common.add_argument("--set", dest="overrides", action="append", type=_override, default=[],
                        metavar="SECTION.KEY=VALUE", help="override one configuration key")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="freqcert", description="Frequency-sliced certification of point-cloud classifiers.",
                     epilog=describe_keys(), formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    kw = dict(parents=[common], epilog=describe_keys(), formatter_class=argparse.RawDescriptionHelpFormatter)

    sub.add_parser("gen-data", help="write the synthetic train/test clouds as XYZ plus manifests", **kw)
    sub.add_parser("train", help="train the sliced and the undefended classifiers", **kw)
    p = sub.add_parser("certify", help="certify every test sample", **kw)
    p.add_argument("--train", action="store_true", help="train models first if none are saved")
    p = sub.add_parser("attack", help="PGD evaluation over the epsilon grids", **kw)
    p.add_argument("--train", action="store_true", help="train models first if none are saved")
    p = sub.add_parser("eval", help="certify + attack (+ oracle) with a merged report", **kw)
    p.add_argument("--retrain", action="store_true", help="ignore saved models")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--oracle", dest="with_oracle", action="store_const", const=True, default=None)
    g.add_argument("--no-oracle", dest="with_oracle", action="store_const", const=False)
    sub.add_parser("oracle", help="run the oracle suite; exit 2 if an assertive check fails", **kw)
    p = sub.add_parser("replay", help="recompute the observed value of oracle violation rows", **kw)
    p.add_argument("violations", help="oracle_violations.csv")
    p.add_argument("--row", type=int, action="append", help="0-based row index (repeatable; default all)")
    return parser


def resolve_config(args):
    overrides = dict(args.overrides)
    for flag, key in (("seed", ("run", "seed")), ("out", ("run", "out"))):
        value = getattr(args, flag)
        if value is None:
            continue
        if key in overrides and overrides[key] != str(value):
            raise UsageError(f"--{flag} conflicts with --set {key[0]}.{key[1]}={overrides[key]}")
        overrides[key] = str(value)
    return load_config(args.config, overrides)


def _models(cfg, out, allow_train):
    try:
        return harness.load_models(out)
    except FileNotFoundError:
        if not allow_train:
            raise
    train_ds, _ = harness.load_datasets(cfg)
    models = harness.train_models(cfg, train_ds)
    harness.save_models(models, out)
    return models


def cmd_gen_data(cfg, args):
    for ds in harness.load_datasets(cfg):
        print(harness.write_dataset(ds, cfg.run_out))
    return EXIT_OK


def cmd_train(cfg, args):
    train_ds, _ = harness.load_datasets(cfg)
    models = harness.train_models(cfg, train_ds)
    harness.save_models(models, cfg.run_out)
    for name in ("freqcert", "undefended"):
        hist = getattr(models, name).feature_spec.get("history", [])
        tail = f", final epoch loss {hist[-1]:.4f}" if hist else ""
        print(f"{name}: saved{tail}")
    return EXIT_OK


def cmd_certify(cfg, args):
    t0 = time.perf_counter()
    _, test_ds = harness.load_datasets(cfg)
    report = harness.run_certify(cfg, _models(cfg, cfg.run_out, args.train), test_ds)
    report.wall_clock = time.perf_counter() - t0
    harness.write_report(cfg.run_out, report)
    _print_rows(report.rows)
    return EXIT_OK


def cmd_attack(cfg, args):
    t0 = time.perf_counter()
    _, test_ds = harness.load_datasets(cfg)
    models = _models(cfg, cfg.run_out, args.train)
    records = harness.run_attack_eval(cfg, models, test_ds, cfg.run_out)
    report = harness.RobustnessReport(rows=harness.attack_rows(cfg, records), records=records,
                                      config_snapshot=cfg.to_ini())
    report.wall_clock = time.perf_counter() - t0
    harness.write_report(cfg.run_out, report)
    _print_rows(report.rows)
    return EXIT_OK


def cmd_eval(cfg, args):
    report = harness.run_eval(cfg, with_oracle=args.with_oracle, retrain=args.retrain)
    print(harness.BANNER)
    _print_rows(report.rows)
    for r in report.oracle:
        print(r.summary())
    return EXIT_ORACLE if harness.oracle_failed(report.oracle) else EXIT_OK


def cmd_oracle(cfg, args):
    t0 = time.perf_counter()
    reports = harness.run_oracle_suite(cfg)
    report = harness.RobustnessReport(oracle=reports, config_snapshot=cfg.to_ini(),
                                      wall_clock=time.perf_counter() - t0)
    harness.write_report(cfg.run_out, report)
    for r in reports:
        print(r.summary())
    return EXIT_ORACLE if harness.oracle_failed(reports) else EXIT_OK


def cmd_replay(cfg, args):
    if not os.path.exists(args.violations):
        raise UsageError(f"file not found: {args.violations}")
    with open(args.violations, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    picks = args.row if args.row else range(len(rows))
    worst = 0.0
    for i in picks:
        if not 0 <= i < len(rows):
            raise UsageError(f"row {i} out of range (file has {len(rows)} rows)")
        row = rows[i]
        value = oracle.replay(row)
        diff = abs(value - float(row["observed"]))
        worst = max(worst, diff)
        print(f"row {i} {row['check']} trial={row['trial']} recorded={row['observed']} replayed={value!r} "
              f"diff={diff:.3e}")
    return EXIT_OK if worst <= 1e-12 else EXIT_USAGE


def _print_rows(rows):
    if not rows:
        return
    columns = [c for c in harness.REPORT_COLUMNS if c in rows[0]]
    print(" ".join(f"{c:>14.14}" for c in columns))
    for row in rows:
        print(" ".join(f"{row[c]:>14.4f}" for c in columns))


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "certify": cmd_certify, "attack": cmd_attack,
            "eval": cmd_eval, "oracle": cmd_oracle, "replay": cmd_replay}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except (UsageError, ConfigError, FreqCertError, FileNotFoundError, ValueError) as exc:
        print(f"freqcert: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
