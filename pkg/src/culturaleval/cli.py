"""Command-line entry point: ``culturaleval <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config
from .corpus import (
    CorpusError,
    convert_tabular_annotations,
    convert_tabular_dialogs,
    corpus_stats,
    load_annotations,
    load_dialogs,
    write_records,
)

log = logging.getLogger("culturaleval")


def _run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, type=Path, help="run configuration (YAML or JSON)")
    p.add_argument("--csi-match-threshold", type=int, help="fuzzy match threshold 0-100 for CSI presence")
    p.add_argument("--judge-model", help="override the judge backend's model id")
    p.add_argument("--cache-dir", type=Path)
    p.add_argument("--out-dir", type=Path)
    p.add_argument("--max-inflight", type=int, help="concurrent completion requests per stage")
    p.add_argument("--significance", type=float, help="p-value level for flagging correlations")
    p.add_argument("--p-value-method", choices=("normal", "exact"))
    p.add_argument("--csi-mode", choices=("occurrence", "type"))
    p.add_argument("--no-figures", action="store_true", help="skip PNG rendering in 'report'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="culturaleval", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_ in (
        ("adapt", "generate adaptations with every configured adapter backend"),
        ("evaluate", "run structure, %CSI, edit and dialog evaluation stages"),
        ("report", "render Markdown/CSV tables and figures from evaluation outputs"),
    ):
        _run_options(sub.add_parser(name, help=help_))

    p = sub.add_parser("correlate", help="correlate human ratings with judge dialog scores")
    _run_options(p)
    p.add_argument("--human", type=Path, help="human ratings CSV (overrides config)")

    p = sub.add_parser("validate-corpus", help="parse a corpus and print its statistics")
    p.add_argument("dialogs", type=Path)
    p.add_argument("--annotations", type=Path)
    p.add_argument("--permissive", action="store_true", help="skip malformed records instead of failing")
    p.add_argument("--exclude-notes", action="store_true", help="do not count transcript notes as utterances")

    p = sub.add_parser("convert-corpus", help="convert CSV/TSV exports to the JSONL corpus format")
    p.add_argument("dialogs", type=Path, help="one row per utterance")
    p.add_argument("--annotations", type=Path, help="one row per CSI occurrence")
    p.add_argument("--out-dir", type=Path, required=True)

    p = sub.add_parser("sample-human-eval", help="seeded sample of dialog ids for human rating")
    p.add_argument("dialogs", type=Path)
    p.add_argument("-k", type=int, default=100)
    p.add_argument("--seed", type=int, required=True)
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    out = {
        "csi_match_threshold": args.csi_match_threshold,
        "judge_model": args.judge_model,
        "cache_dir": args.cache_dir,
        "out_dir": args.out_dir,
        "max_inflight": args.max_inflight,
        "significance": args.significance,
        "p_value_method": args.p_value_method,
        "csi_mode": args.csi_mode,
    }
    if args.no_figures:
        out["figures"] = False
    return out


def _validate_corpus(args) -> int:
    dialogs = load_dialogs(args.dialogs, permissive=args.permissive, count_transcript_notes=not args.exclude_notes)
    annotations = load_annotations(args.annotations, dialogs) if args.annotations else []
    stats = corpus_stats(dialogs, annotations, include_notes=not args.exclude_notes)
    print(json.dumps(
        {
            "dialogs": stats.n_dialogs,
            "utterances": stats.n_utterances,
            "speakers": stats.n_speakers,
            "csi_occurrences": stats.n_occurrences,
            "by_category": stats.by_category,
            "by_foreignness": {str(k): v for k, v in stats.by_foreignness.items()},
            "unlocated_surfaces": sum(1 for a in annotations if not a.located),
        },
        indent=2,
    ))
    return 0


def _convert_corpus(args) -> int:
    dialogs = convert_tabular_dialogs(args.dialogs)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    with open(args.out_dir / "dialogs.jsonl", "w", encoding="utf-8") as fh:
        write_records(dialogs, fh)
    if args.annotations:
        anns = convert_tabular_annotations(args.annotations, dialogs)
        with open(args.out_dir / "annotations.jsonl", "w", encoding="utf-8") as fh:
            write_records(anns, fh)
    print(f"wrote {len(dialogs)} dialogs to {args.out_dir}")
    return 0


def _sample(args) -> int:
    from .pipeline import sample_dialog_ids

    ids = [d.id for d in load_dialogs(args.dialogs)]
    for did in sample_dialog_ids(ids, args.k, args.seed):
        print(did)
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "validate-corpus":
            return _validate_corpus(args)
        if args.command == "convert-corpus":
            return _convert_corpus(args)
        if args.command == "sample-human-eval":
            return _sample(args)

        from . import pipeline, report

        config = load_config(args.config, _overrides(args))
        if args.command == "adapt":
            return pipeline.cmd_adapt(config)
        if args.command == "evaluate":
            return pipeline.cmd_evaluate(config)
        if args.command == "correlate":
            return pipeline.cmd_correlate(config, args.human)
        return report.cmd_report(config)
    except (ConfigError, CorpusError, OSError, ValueError) as exc:
        print(f"culturaleval: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
