"""Command-line entry point.

    excomment [--config FILE] [--<key> VALUE ...] COMMAND

Commands: ingest, build-index, retrieve, train, generate, evaluate, pipeline.
Exit codes: 0 success, 1 usage/config error, 2 missing artifact, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import pipeline
from .config import ConfigError, PipelineConfig, load_config

EXIT_OK, EXIT_CONFIG, EXIT_MISSING, EXIT_RUNTIME = 0, 1, 2, 3

COMMANDS = ("ingest", "build-index", "retrieve", "train", "generate", "evaluate", "pipeline")

BUNDLED_FIXTURE = Path(__file__).parent / "data" / "fixture_50.jsonl"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="excomment", description="Exemplar-guided code comment generation.", allow_abbrev=False)
    parser.add_argument("--config", help="flat key = value config file")
    parser.add_argument("-v", "--verbose", action="store_true")
    overrides = parser.add_argument_group("config overrides")
    for f in fields(PipelineConfig):
        overrides.add_argument(f"--{f.name.replace('_', '-')}", dest=f"override_{f.name}", metavar="VALUE")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        if name == "evaluate":
            cmd.add_argument("--hypotheses", help="JSON-lines with id, hypothesis, reference (default: work_dir)")
    return parser


def _check_inputs(config: PipelineConfig, command: str) -> None:
    if command in ("ingest", "pipeline"):
        if not config.dataset:
            raise ConfigError(["dataset path is not set"])


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    overrides = {
        key[len("override_") :]: value
        for key, value in vars(args).items()
        if key.startswith("override_") and value is not None
    }
    try:
        if args.config and not Path(args.config).exists():
            raise ConfigError([f"config file {args.config} does not exist"])
        config = load_config(args.config, overrides)
        _check_inputs(config, args.command)
    except ConfigError as e:
        print("config error:", file=sys.stderr)
        for problem in e.problems:
            print(f"  - {problem}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "ingest":
            split = pipeline.run_ingest(config)
            print(f"train/valid/test = {split.sizes()}")
        elif args.command == "build-index":
            index = pipeline.run_build_index(config)
            print(f"indexed {index.doc_count} training documents")
        elif args.command == "retrieve":
            pipeline.run_retrieve(config)
        elif args.command == "train":
            result = pipeline.run_train(config)
            print(f"best epoch {result.best_epoch}, valid loss {result.best_valid_loss:.4f}")
        elif args.command == "generate":
            records = pipeline.run_generate(config)
            print(f"wrote {len(records)} hypotheses")
        elif args.command == "evaluate":
            print(pipeline.run_evaluate(config, args.hypotheses).table())
        elif args.command == "pipeline":
            print(pipeline.run_pipeline(config).table())
    except pipeline.MissingArtifact as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    except Exception as e:  # noqa: BLE001 - every other failure maps to the runtime exit code
        logging.getLogger(__name__).debug("failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main_exit() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_exit()
