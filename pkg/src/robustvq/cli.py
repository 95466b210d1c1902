"""Command line entry point: ``robustvq {run,ablation,sweep,check}``.

Exit status: 0 on success, 1 for configuration errors, 2 when training
hits a non-finite loss.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields

from .config import ExperimentConfig, load_config
from .errors import ConfigError, NumericalError

log = logging.getLogger("robustvq")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _bool(raw: str) -> bool:
    low = raw.lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {raw!r}")


_TYPES = {"int": int, "float": float, "bool": _bool, "str": str}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out-dir", default="runs", help="directory for CSV output")
    for f in fields(ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        p.add_argument(flag, dest=f.name, type=_TYPES[f.type], default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="robustvq", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    _add_config_flags(sub.add_parser("run", help="train and evaluate one configuration"))

    p = sub.add_parser("ablation", help="all seven method presets over several seeds")
    _add_config_flags(p)
    p.add_argument("--seeds", type=int, default=5, help="number of seeds, starting at --seed")

    p = sub.add_parser("sweep", help="codebook initialization scale sweep")
    _add_config_flags(p)
    p.add_argument("--scales", default="0.001,0.01,0.1,1,10,100")
    p.add_argument("--warmup", type=int, default=None, help="pass-through iterations (default m_init)")
    p.add_argument("--train-iters", type=int, default=300)

    sub.add_parser("check", help="run the built-in invariant and oracle checks")
    return parser


def _config_from(args) -> ExperimentConfig:
    overrides = {f.name: getattr(args, f.name) for f in fields(ExperimentConfig)
                 if getattr(args, f.name, None) is not None}
    try:
        return load_config(args.config, overrides)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "check":
            from .checks import run_checks
            return EXIT_OK if run_checks(sys.stdout) else EXIT_NUMERICAL
        cfg = _config_from(args)
        from .experiment import ablation, run_experiment, scaling_sweep
        if args.command == "run":
            rows = run_experiment(cfg, args.out_dir)
            log.info("wrote %d rows to %s", len(rows), args.out_dir)
        elif args.command == "ablation":
            ablation(cfg, range(cfg.seed, cfg.seed + args.seeds), args.out_dir)
            log.info("ablation written to %s", args.out_dir)
        elif args.command == "sweep":
            try:
                scales = [float(s) for s in args.scales.split(",") if s.strip()]
            except ValueError:
                raise ConfigError(f"bad --scales {args.scales!r}") from None
            if any(s <= 0 for s in scales):
                raise ConfigError("scales must be positive")
            scaling_sweep(scales, cfg, args.out_dir, warmup=args.warmup, train_iters=args.train_iters)
            log.info("sweep written to %s", args.out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
