"""Command-line entry point: ``spatialcp {simulate,fit-mle,run,report}``."""

from __future__ import annotations

import argparse
import logging
import sys

from ..exceptions import ConfigError, DataError, MissingResults, NumericalError
from .config import FULL_SCALE_N, load_config

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _parser():
    p = argparse.ArgumentParser(prog="spatialcp", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("simulate", "generate synthetic datasets"),
                        ("fit-mle", "fit spatial covariance parameters to a CSV"),
                        ("run", "run the conformal prediction grid"),
                        ("report", "tables and SVG charts from run results")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--out", help="output directory")
        if name != "report":
            sp.add_argument("--seeds", type=int)
            sp.add_argument("--n", type=int)
            sp.add_argument("--alpha", type=float)
            sp.add_argument("--threads", type=int)
            sp.add_argument("--full-scale", action="store_true", help=f"use N = {FULL_SCALE_N}")
        else:
            sp.add_argument("results", nargs="?", help="results directory (default: --out or config)")
    return p


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            from .report import report
            cfg = load_config(args.config)
            results = args.results or args.out or cfg.out
            for path in report(results, args.out or results):
                print(path)
            return EXIT_OK
        n = FULL_SCALE_N if args.full_scale else args.n
        cfg = load_config(args.config, out=args.out, seeds=args.seeds, n=n,
                          alpha=args.alpha, threads=args.threads)
        from . import runner
        if args.command == "simulate":
            for path in runner.simulate(cfg):
                print(path)
        elif args.command == "fit-mle":
            doc = runner.fit_mle_cmd(cfg)
            print(f"sigma_eps2={doc['params']['sigma_eps2']:.6g} sigma2={doc['params']['sigma2']:.6g} "
                  f"rho={doc['params']['rho']:.6g}")
        else:
            summary = runner.run(cfg)
            print(summary.to_string(index=False))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, MissingResults, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
