"""Command-line entry point: ``sbmrecon <experiment> --config cfg.json``."""

import argparse
import sys

from .errors import ConfigInvalid, SbmReconError
from .harness import EXPERIMENTS, load_config, run


def build_parser():
    p = argparse.ArgumentParser(prog="sbmrecon", description=__doc__)
    sub = p.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="experiment config (JSON)")
        s.add_argument("--seed", type=int, default=None, help="master seed (u64)")
        s.add_argument("--trials", type=int, default=None)
        s.add_argument("--out", default="out", help="directory for CSV and JSON reports")
        s.add_argument("--radius", type=int, default=None, help="explicit ball radius R")
        s.add_argument("--approx-blackbox", action="store_true",
                       help="reuse one global black-box call for every vertex")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, experiment=args.experiment, seed=args.seed,
                          trials=args.trials, radius=args.radius, approx=args.approx_blackbox)
        report = run(cfg)
    except ConfigInvalid as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except SbmReconError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    report.write(args.out)
    for r in report.asserted:
        status = "PASS" if r["passed"] else "FAIL"
        print(f"{status} {r['check']} depth={r['depth']} estimate={r['estimate']} "
              f"target={r['target']}")
    n_fail = sum(not r["passed"] for r in report.asserted)
    print(f"{len(report.asserted) - n_fail}/{len(report.asserted)} asserted rows pass")
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())
