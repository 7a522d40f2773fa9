"""Command line: ``platoon-edca analyze|simulate|validate``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, ScenarioConfig, load_config


def _config(path: str | None) -> ScenarioConfig:
    return load_config(path) if path else ScenarioConfig()


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="TOML scenario file (defaults if omitted)")
    p.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    p.add_argument("--duration", type=float, metavar="S",
                   help="simulated horizon in seconds (default: whole configured run)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="platoon-edca", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="run the analytical model")
    _common(p)

    p = sub.add_parser("simulate", help="run the event simulator for one seed")
    _common(p)
    p.add_argument("--seed", type=int, default=0, help="master random seed (default: 0)")
    p.add_argument("--window", type=float, metavar="S", help="statistics window in seconds")

    p = sub.add_parser("validate", help="compare simulation over several seeds with the model")
    _common(p)
    p.add_argument("--seeds", type=int, default=10, metavar="K",
                   help="number of seeds, 0..K-1 (default: 10)")
    p.add_argument("--seed", type=int, default=0, help="first seed (default: 0)")
    p.add_argument("--window", type=float, metavar="S", help="statistics window in seconds")
    p.add_argument("--workers", type=int, help="parallel processes (default: CPU count)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args.config)
        if args.duration is not None:
            if args.duration <= 0:
                raise ConfigError("--duration must be > 0", "duration")
            from dataclasses import replace
            cfg = replace(cfg, t_end=cfg.t_start + args.duration)
        out = Path(args.out)
        from . import pipeline

        if args.command == "analyze":
            series = pipeline.run_analysis(cfg)
            paths = pipeline.emit_outputs(series, out, cfg)
        elif args.command == "simulate":
            if args.seed < 0:
                raise ConfigError("--seed must be >= 0", "seed")
            from .sim import simulate

            series = simulate(cfg, args.seed, window=args.window)
            paths = pipeline.emit_outputs(series, out, cfg)
        else:
            if args.seeds < 1:
                raise ConfigError("--seeds must be >= 1", "seeds")
            seeds = range(args.seed, args.seed + args.seeds)
            report = pipeline.run_validation(cfg, seeds, window=args.window, workers=args.workers)
            paths = pipeline.emit_outputs(report.analysis, out, cfg)
            paths += pipeline.emit_outputs(report.simulation, out, cfg)
            paths.append(pipeline.write_report(report, out))
            print(report.table())
    except (ConfigError, OSError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"platoon-edca: error: {exc}", file=sys.stderr)
        return 2
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
