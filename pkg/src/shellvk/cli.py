"""Command line interface: ``shellvk {simulate3d,simulate2d,sweep,selftest}``."""

import argparse
import sys

from . import harness
from .config import SCENARIOS, load_config
from .errors import ConfigError, InputError, SolverError


def _parser():
    ap = argparse.ArgumentParser(prog="shellvk", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML experiment file")
        p.add_argument("--scenario", choices=SCENARIOS, help="shipped scenario used as the base config")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. time.T=0.1 (repeatable)")
        p.add_argument("--out", help="output root (default: $SHELLVK_OUT, then output.dir)")

    p3 = sub.add_parser("simulate3d", help="integrate the 3D shell for one thickness")
    common(p3)
    p3.add_argument("--h", type=float, help="thickness (default: first entry of the h list)")
    p2 = sub.add_parser("simulate2d", help="integrate the limit von Karman system")
    common(p2)
    ps = sub.add_parser("sweep", help="thickness sweep against the limit trajectory")
    common(ps)
    ps.add_argument("--jobs", type=int, default=1, help="concurrent per-h simulations")
    ps.add_argument("--check", action="store_true", help="exit with 3 when the trend checks fail")
    pt = sub.add_parser("selftest", help="run the invariant suites")
    pt.add_argument("--seed", type=int, default=0)
    pt.add_argument("--out", help="directory for selftest.json (default: print only)")
    return ap


def _config(args):
    if args.config is None and args.scenario is None:
        raise ConfigError("give --config and/or --scenario")
    return load_config(args.config, args.scenario, args.set)


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        if args.command == "selftest":
            summary = harness.run_selftest(args.seed)
            print(harness.format_selftest(summary))
            if args.out:
                from pathlib import Path
                Path(args.out).mkdir(parents=True, exist_ok=True)
                harness.write_json(Path(args.out) / "selftest.json", summary)
            return harness.EXIT_OK if summary["passed"] else harness.EXIT_CHECK
        cfg = _config(args)
        if args.command == "simulate3d":
            art = harness.run_simulate3d(cfg, args.h, args.out)
        elif args.command == "simulate2d":
            art = harness.run_simulate2d(cfg, args.out)
        else:
            if args.jobs < 1:
                raise ConfigError("--jobs must be at least 1")
            _, art = harness.run_sweep(cfg, args.jobs, args.out)
            if args.check and art.exit_code == harness.EXIT_OK and not art.result["checks"]["passed"]:
                art.exit_code = harness.EXIT_CHECK
        print(f"{art.status}: {art.path(art.summary)}")
        return art.exit_code
    except (ConfigError, InputError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return harness.EXIT_CONFIG
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return harness.EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
