"""Command-line entry point.

Subcommands: ingest, index, pretrain, augment, train-offline, run, evaluate,
ablate, report. Every model-facing command takes ``--config`` (a single JSON
file); ``--seed`` and ``--mode`` override the file values. Exit codes:
0 success, 1 configuration error, 2 data error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..corpus import DEFAULT_RULES, SegmentationRules
from ..errors import (
    ChecksumFailure,
    EmptyCorpus,
    FormatError,
    MissingSection,
    VersionMismatch,
)
from . import orchestrator as orch
from .config import ConfigError, RunConfig

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

_DATA_ERRORS = (FormatError, MissingSection, EmptyCorpus, ChecksumFailure, VersionMismatch, FileNotFoundError)


def _load_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.from_json_file(args.config)
    return config.with_overrides(mode=getattr(args, "mode", None), seed=getattr(args, "seed", None)).validate()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="parajudge",
                                     description="Parametric retrieval-augmented generation for judgment tasks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse raw judgment files into JSONL stores")
    p.add_argument("--offline", help="raw file for the offline (parametric) set")
    p.add_argument("--online", help="raw file for the online knowledge base")
    p.add_argument("--test", help="raw file for the test set")
    p.add_argument("--rules", help="segmentation rule table (JSON)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--min-chars", type=int, default=150)
    p.add_argument("--max-per-cause", type=int, default=10)
    p.add_argument("--keep-claims", action="store_true",
                   help="keep prosecution-claim sentences in test facts")

    for name, extra in (
        ("index", "build the online inverted index (and snapshot, if configured)"),
        ("pretrain", "pretrain and freeze the base model"),
        ("train-offline", "train one adapter per offline document"),
    ):
        p = sub.add_parser(name, help=extra)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int)

    p = sub.add_parser("augment", help="write the QA-pair expansion of a store")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--kind", choices=("offline", "online", "test"), default="offline")
    p.add_argument("--out")

    p = sub.add_parser("run", help="generate for every test case under a mode")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=("base", "vanilla_rag", "p_rag", "combine"))

    p = sub.add_parser("evaluate", help="score persisted generations")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=("base", "vanilla_rag", "p_rag", "combine"))
    p.add_argument("--records", help="generation records path (defaults by mode)")
    p.add_argument("--rescaled", action="store_true",
                   help="also report the 2x-rescaled difference metrics")

    p = sub.add_parser("ablate", help="run a paired comparison")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--which", choices=("structure", "stage", "scale"), required=True)

    p = sub.add_parser("report", help="recompute the summary from per-case records")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=("base", "vanilla_rag", "p_rag", "combine"))
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "ingest":
        raw = {k: getattr(args, k) for k in ("offline", "online", "test") if getattr(args, k)}
        if not raw:
            raise ConfigError("ingest requires at least one of --offline/--online/--test")
        rules = SegmentationRules.from_json_file(args.rules) if args.rules else DEFAULT_RULES
        orch.cmd_ingest(raw, args.out_dir, rules=rules, min_chars=args.min_chars,
                        max_per_cause=args.max_per_cause,
                        strip_claims_from_test=not args.keep_claims)
        return EXIT_OK
    config = _load_config(args)
    if args.command == "index":
        orch.cmd_index(config)
    elif args.command == "pretrain":
        orch.cmd_pretrain(config)
    elif args.command == "augment":
        orch.cmd_augment(config, kind=args.kind, out_path=args.out)
    elif args.command == "train-offline":
        orch.cmd_train_offline(config)
    elif args.command == "run":
        orch.cmd_run(config)
    elif args.command == "evaluate":
        orch.cmd_evaluate(config, records_path=args.records, rescaled=args.rescaled)
    elif args.command == "ablate":
        orch.cmd_ablate(config, which=args.which)
    elif args.command == "report":
        summary = orch.cmd_report(config, mode=args.mode)
        import json

        print(json.dumps(summary, indent=2, sort_keys=True))
    else:  # pragma: no cover - argparse enforces the choices
        raise ConfigError(f"unknown command {args.command!r}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        orch.log_event("error", kind="config", message=str(exc))
        return EXIT_CONFIG
    except _DATA_ERRORS as exc:
        orch.log_event("error", kind="data", message=str(exc))
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        orch.log_event("error", kind="runtime", message=f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
