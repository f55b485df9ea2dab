"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
import logging
import os
import sys

from vqanon import pipeline
from vqanon.config import load_config
from vqanon.corpus import write_desk_corpus
from vqanon.errors import DataError, NumericalError

log = logging.getLogger("vqanon")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _pairs(values, what):
    out = {}
    for v in values or []:
        name, sep, rest = v.partition("=")
        if not sep or not name or not rest:
            raise argparse.ArgumentTypeError(f"{what} must look like NAME=VALUE, got {v!r}")
        out[name] = rest
    return out


def _run_root():
    return os.environ.get("VQANON_RUN_DIR", "runs")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--seed", type=int, help="root seed (overrides the config)")
    common.add_argument("--profile", choices=("desk", "paper"), help="default profile")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="vqanon", description="VQ-VAE speaker anonymization toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("make-corpus", parents=[common], help="write the synthetic desk corpus")
    s.add_argument("out_dir")

    s = sub.add_parser("features", parents=[common], help="extract feature caches from WAVs")
    s.add_argument("input_dir")
    s.add_argument("out_dir")
    s.add_argument("--jobs", type=int, default=1)

    s = sub.add_parser("build-pool", parents=[common], help="build the speaker pool file")
    s.add_argument("feature_dir")
    s.add_argument("xvector_dir")
    s.add_argument("out_file")

    s = sub.add_parser("train", parents=[common], help="train or resume a model")
    s.add_argument("feature_dir")
    s.add_argument("--xvector-dir")
    s.add_argument("--run-dir", help="default: $VQANON_RUN_DIR/train")
    s.add_argument("--no-resume", action="store_true")

    s = sub.add_parser("anonymize", parents=[common], help="synthesize anonymized speech")
    s.add_argument("feature_dir")
    s.add_argument("xvector_dir")
    s.add_argument("pool_file")
    s.add_argument("checkpoint")
    s.add_argument("out_dir")
    s.add_argument("--system", type=int, choices=(1, 2, 3), required=True)

    s = sub.add_parser("evaluate", parents=[common], help="EER / UAR report and tables")
    s.add_argument("--trials", action="append", required=True, metavar="SYSTEM=PATH")
    s.add_argument("--emotion", action="append", metavar="SYSTEM=PATH")
    s.add_argument("--wer", action="append", metavar="SYSTEM=VALUE",
                   help="externally computed WER for a system")
    s.add_argument("--out", help="report directory (default: $VQANON_RUN_DIR/eval)")
    return p


def _dispatch(args):
    cfg = load_config(args.config, profile=args.profile, seed=args.seed)
    if args.command == "make-corpus":
        for path in write_desk_corpus(args.out_dir):
            log.info("wrote %s", path)
        return EXIT_OK
    if args.command == "features":
        n, failures = pipeline.cmd_features(args.input_dir, args.out_dir, cfg, jobs=args.jobs)
        print(f"{n} utterance(s) written, {len(failures)} skipped")
        return EXIT_DATA if failures else EXIT_OK
    if args.command == "build-pool":
        pool = pipeline.cmd_build_pool(args.feature_dir, args.xvector_dir, args.out_file)
        print(f"pool of {len(pool)} speaker(s) written to {args.out_file}")
        return EXIT_OK
    if args.command == "train":
        run_dir = args.run_dir or cfg.paths.run_dir or os.path.join(_run_root(), "train")
        trainer = pipeline.cmd_train(args.feature_dir, cfg, run_dir, args.xvector_dir,
                                     resume=not args.no_resume)
        print(f"trained to step {trainer.step} (epoch {trainer.epoch}); run directory {run_dir}")
        return EXIT_OK
    if args.command == "anonymize":
        done = pipeline.cmd_anonymize(args.feature_dir, args.xvector_dir, args.pool_file,
                                      args.checkpoint, args.system, args.out_dir, cfg)
        print(f"{len(done)} utterance(s) anonymized with system {args.system}")
        return EXIT_OK
    if args.command == "evaluate":
        trials = _pairs(args.trials, "--trials")
        emotion = _pairs(args.emotion, "--emotion")
        try:
            wer = {k: {"WER": float(v)} for k, v in _pairs(args.wer, "--wer").items()}
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"--wer: {exc}") from exc
        out = args.out or os.path.join(_run_root(), "eval")
        report = pipeline.cmd_evaluate(trials, emotion, out, wer)
        sys.stdout.write(report["table_text"])
        if not report["uar_available"]:
            print("UAR: absent (no emotion predictions given)")
        return EXIT_OK
    raise AssertionError(args.command)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except argparse.ArgumentTypeError as exc:
        print(f"vqanon: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"vqanon: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"vqanon: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
