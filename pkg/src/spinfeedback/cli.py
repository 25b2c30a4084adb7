"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 runtime failure (session
abort or other error while computing), 4 input schema error.
"""

from __future__ import annotations

import argparse
import shutil
import sys
from pathlib import Path

from . import io
from .config import bundled_config, load_config, load_text
from .errors import ConfigError, SchemaError, SessionAbort

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_SCHEMA = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH",
                        help="YAML or JSON config (default: the bundled default suite)")
    common.add_argument("--seed", type=int, metavar="N", help="override session.seed")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    p = argparse.ArgumentParser(prog="spinfeedback",
                                description="Closed-loop spin-qubit calibration simulator.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("simulate", parents=[common], help="run a session and write its log")
    s.add_argument("--out", required=True, metavar="DIR")
    a = sub.add_parser("analyze", parents=[common], help="wavelet and PSD analysis of logs")
    a.add_argument("--out", required=True, metavar="DIR")
    a.add_argument("--column", default="value_normalized",
                   choices=io.LOG_COLUMNS[1:], help="log column to analyze")
    a.add_argument("inputs", nargs="+", metavar="CSV_OR_DIR")
    r = sub.add_parser("replicate-fig2", parents=[common], help="full figure report")
    r.add_argument("--out", required=True, metavar="DIR")
    sub.add_parser("validate-config", parents=[common], help="check a config file and echo it")
    return p


def _load(args, fig2: bool = False):
    if args.config is None:
        return load_text(bundled_config("fig2" if fig2 else "default"), args.seed)
    return load_config(args.config, args.seed)


def _say(args, msg):
    if not args.quiet:
        print(msg)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _load(args, fig2=args.command == "replicate-fig2")
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "validate-config":
        if not args.quiet:
            sys.stdout.write(io.dump_json(cfg.document))
        return EXIT_OK

    out = Path(args.out)
    existed = out.exists()
    try:
        if args.command == "simulate":
            from .pipeline import simulate
            log = simulate(cfg, out)
            _say(args, f"wrote {len(log.series)} protocol logs "
                       f"({cfg.session.n_cycles} cycles) to {out}")
        elif args.command == "analyze":
            from .pipeline import analyze_files
            results = analyze_files(args.inputs, out, cfg.analysis, cfg.export, args.column)
            for r in results:
                for w in r.warnings:
                    print(f"warning: {w}", file=sys.stderr)
            _say(args, f"analyzed {len(results)} series into {out}")
        else:
            from .fig2 import replicate_fig2
            report = replicate_fig2(out, cfg, quiet=args.quiet)
            det = report.get("detuning", {})
            _say(args, f"{report['n_panels']} panel groups; "
                       f"plateaus {det.get('n_distinct')}, "
                       f"residual std {det.get('residual_std_mV', float('nan')):.4f} mV")
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        _cleanup(out, existed)
        return EXIT_CONFIG
    except SchemaError as err:
        print(f"schema error: {err}", file=sys.stderr)
        _cleanup(out, existed)
        return EXIT_SCHEMA
    except SessionAbort as err:
        print(f"session aborted: {err}", file=sys.stderr)
        _cleanup(out, existed)
        return EXIT_RUNTIME
    except (OSError, ArithmeticError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        _cleanup(out, existed)
        return EXIT_RUNTIME
    return EXIT_OK


def _cleanup(out: Path, existed: bool):
    if not existed and out.exists():
        shutil.rmtree(out, ignore_errors=True)


if __name__ == "__main__":
    sys.exit(main())
