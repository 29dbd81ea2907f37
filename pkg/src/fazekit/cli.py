"""Command line entry point: ``fazekit <command> [--config PATH] [--seed N] [--out DIR] [--force]``.

Exit codes: 0 success, 1 usage or config error, 2 data or format error,
3 numerical failure.
"""

import argparse
import logging
import sys

from .errors import (ConfigError, DependencyError, FormatError, InvalidArgumentError, NumericalError)
from .harness import config as config_mod
from .harness.experiment import Pipeline

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment config file (INI)")
    common.add_argument("--seed", type=int, metavar="N", help="override the seed of every section")
    common.add_argument("--out", metavar="DIR", default="runs/default", help="artifact directory")
    common.add_argument("--force", action="store_true", help="recompute even if cached outputs exist")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="fazekit", description="Few-shot gaze estimation experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="render the synthetic dataset")
    sub.add_parser("train-dted", parents=[common], help="train the transforming encoder-decoder")
    sub.add_parser("train-adagen", parents=[common], help="meta-learn the gaze estimator per k")
    pers = sub.add_parser("personalize", parents=[common], help="adapt to one test person")
    pers.add_argument("--person", type=int, required=True, help="test person identifier")
    pers.add_argument("--k", type=int, default=9, help="number of calibration samples")
    pers.add_argument("--model-out", metavar="PATH", help="where to write the personal weights")
    sub.add_parser("evaluate", parents=[common], help="few-shot evaluation of the configured methods")
    sub.add_parser("ablate", parents=[common], help="evaluate DT-ED loss variants")
    sub.add_parser("run", parents=[common], help="full pipeline: gen-data to evaluate")
    return p


def _config(args):
    cfg = config_mod.load(args.config) if args.config else config_mod.ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _dispatch(args):
    pipe = Pipeline(_config(args), args.out, force=args.force)
    cmd = args.command
    if cmd == "gen-data":
        print(pipe.gen_data())
    elif cmd == "train-dted":
        print(pipe.train_dted(build_upstream=False))
    elif cmd == "train-adagen":
        print(pipe.train_adagen(build_upstream=False))
    elif cmd == "personalize":
        path, before, after = pipe.personalize(args.person, args.k, args.model_out)
        print(f"{path}\nvalidation error {before:.3f} deg -> {after:.3f} deg")
    elif cmd == "evaluate":
        if "differential" in pipe.cfg.eval.methods:
            pipe.train_differential(build_upstream=False)
        pipe.evaluate(build_upstream=False)
        print(pipe.path("evaluate", 1).read_text(), end="")
    elif cmd == "ablate":
        pipe.ablate(build_upstream=False)
        print(pipe.path("ablate", 1).read_text(), end="")
    elif cmd == "run":
        pipe.run()
        print(pipe.path("evaluate", 1).read_text(), end="")


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    # stage progress and cache hits are always shown
    logging.getLogger("fazekit.harness.experiment").setLevel(logging.INFO)
    try:
        _dispatch(args)
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, DependencyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
