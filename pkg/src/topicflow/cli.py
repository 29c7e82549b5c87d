"""``topicflow`` command line.

Exit status: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import corpus as C
from . import pipeline as P
from .config import RunConfig, base_type, build_config, field_index, load_file, parse_value
from .eval.coherence import cv_coherence
from .eval.report import evaluate_run, rows_to_csv
from .io import atomic_write_text, dumps_jsonl, load_checkpoint, write_jsonl
from .ntm import FlowNTM, NtmConfig, topic_dump

log = logging.getLogger("topicflow")

COMMANDS = {
    "build-vocab": "build the token and bag-of-words vocabularies from --data",
    "pretrain-ntm": "pretrain the flow topic model on --data",
    "train": "jointly train summarizer and topic model on --data, validating on --valid",
    "summarize": "beam-search summaries of --data with --checkpoint",
    "eval": "ROUGE of --outputs against --refs",
    "topics": "top-k words per topic of a topic-model or joint checkpoint",
    "stats": "corpus size and mean document/summary lengths of --data",
    "grid": "sweep flow length x topic count and report a ROUGE grid",
    "synth": "write a synthetic corpus (--kind news|copy|topics) to --out",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    groups: dict[str, argparse._ArgumentGroup] = {}
    for name, (section, f, tp) in field_index().items():
        g = groups.get(section) or groups.setdefault(section, p.add_argument_group(f"[{section}]"))
        flag = "--" + name.replace("_", "-")
        scalar, optional = base_type(tp)
        default = f.default
        if scalar is bool:
            g.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction,
                           default=argparse.SUPPRESS, help=f"(default: {default})")
        else:
            g.add_argument(flag, dest=name, type=lambda s, tp=tp: parse_value(s, tp),
                           default=argparse.SUPPRESS, metavar=scalar.__name__.upper(),
                           help=f"(default: {default})")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="topicflow", description="Topic-aware abstractive summarization.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name, helptext in COMMANDS.items():
        p = sub.add_parser(name, help=helptext, description=helptext)
        p.add_argument("--config", help="TOML or JSON run configuration (default: none)")
        if name == "grid":
            p.add_argument("--flow-lengths", default="1,4,16", help="comma list (default: 1,4,16)")
            p.add_argument("--topic-counts", default="5,10,20", help="comma list (default: 5,10,20)")
        if name == "synth":
            p.add_argument("--kind", choices=("news", "copy", "topics"), default="news",
                           help="(default: news)")
            p.add_argument("--n", type=int, default=200, help="number of records (default: 200)")
        _add_config_flags(p)
    return parser


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"not a comma-separated integer list: {text!r}") from None
    if not vals:
        raise UsageError("empty list")
    return vals


def _emit(text: str, path: str | None) -> None:
    if path:
        atomic_write_text(path, text)
    else:
        sys.stdout.write(text)


# commands ----------------------------------------------------------------------

def cmd_build_vocab(cfg: RunConfig, args) -> None:
    vocab, bow = P.build_vocabularies(cfg)
    print(json.dumps({"vocab_size": len(vocab), "bow_size": len(bow),
                      "vocab_dir": str(cfg.paths.vocab_dir or cfg.paths.out_dir)}))


def cmd_pretrain(cfg: RunConfig, args) -> None:
    _, losses, out = P.run_pretrain(cfg)
    print(json.dumps({"checkpoint": str(out), "epochs": len(losses),
                      "first_loss": losses[0] if losses else None,
                      "final_loss": losses[-1] if losses else None}))


def cmd_train(cfg: RunConfig, args) -> None:
    summary = P.run_train(cfg)
    out = {"out_dir": cfg.paths.out_dir, "checkpoints": summary["checkpoints"]}
    if "test_reported" in summary:
        out["test"] = summary["test_reported"]
    print(json.dumps(out))


def cmd_summarize(cfg: RunConfig, args) -> None:
    model, ntm, vocab, bow, header = P.load_joint(P.require(cfg.paths.checkpoint, "checkpoint"))
    records = C.load_records(P.require(cfg.paths.data, "data"))
    rows = P.summarize_records(model, ntm, records, vocab, bow, cfg)
    if cfg.paths.out:
        write_jsonl(cfg.paths.out, rows)
    else:
        sys.stdout.write(dumps_jsonl(rows))


def cmd_eval(cfg: RunConfig, args) -> None:
    agg, rows = evaluate_run(P.require(cfg.paths.outputs, "outputs"), P.require(cfg.paths.refs, "refs"))
    print(f"{agg['rouge1']:.2f}/{agg['rouge2']:.2f}/{agg['rougeL']:.2f}")
    if cfg.paths.out:
        atomic_write_text(cfg.paths.out, json.dumps({"n": len(rows), **agg}, indent=2, sort_keys=True) + "\n")
        atomic_write_text(Path(cfg.paths.out).with_suffix(".csv"), rows_to_csv(rows))


def _topic_model(path) -> tuple[FlowNTM, list[str]]:
    header, tensors = load_checkpoint(path)
    if not header.get("ntm_config"):
        raise ValueError(f"{path}: checkpoint has no topic model")
    return FlowNTM.from_state(NtmConfig(**header["ntm_config"]), tensors), header["bow_vocab"]


def cmd_topics(cfg: RunConfig, args) -> None:
    model, bow_words = _topic_model(P.require(cfg.paths.checkpoint, "checkpoint"))
    k = cfg.decode.k
    if k < 1 or k > len(bow_words):
        raise ValueError(f"k must be in [1, {len(bow_words)}]")
    dump = topic_dump(model, bow_words, k)
    if cfg.paths.data:
        docs = [C.tokenize(r.document) for r in C.load_records(cfg.paths.data)]
        report = cv_coherence([t["top_words"] for t in dump], docs, cfg.decode.window)
        for t, score in zip(dump, report.per_topic):
            t["cv"] = score
    _emit(json.dumps(dump, indent=2) + "\n", cfg.paths.out)


def cmd_stats(cfg: RunConfig, args) -> None:
    n, doc, summ = C.corpus_stats(C.load_records(P.require(cfg.paths.data, "data")))
    _emit(json.dumps({"documents": n, "mean_document_tokens": round(doc, 4),
                      "mean_summary_tokens": round(summ, 4)}) + "\n", cfg.paths.out)


def cmd_grid(cfg: RunConfig, args) -> None:
    from .grid import format_grid, run_grid
    flows, topics = _int_list(args.flow_lengths), _int_list(args.topic_counts)
    cells = run_grid(cfg, flows, topics)
    table = format_grid(cells, flows, topics)
    out_dir = Path(cfg.paths.out_dir)
    atomic_write_text(out_dir / "grid.json", json.dumps(cells, indent=2, sort_keys=True) + "\n")
    atomic_write_text(out_dir / "grid.md", table)
    sys.stdout.write(table)


def cmd_synth(cfg: RunConfig, args) -> None:
    from . import synthetic as S
    seed = cfg.training.seed
    if args.kind == "news":
        records = S.news_pairs(args.n, seed)
    elif args.kind == "copy":
        records = S.copy_pairs(args.n, seed=seed)
    else:
        records = S.topic_corpus(n_docs=args.n, seed=seed).records
    rows = [{"id": r.id, "document": r.document, "summary": r.summary} for r in records]
    if cfg.paths.out:
        write_jsonl(cfg.paths.out, rows)
    else:
        sys.stdout.write(dumps_jsonl(rows))


HANDLERS = {
    "build-vocab": cmd_build_vocab, "pretrain-ntm": cmd_pretrain, "train": cmd_train,
    "summarize": cmd_summarize, "eval": cmd_eval, "topics": cmd_topics, "stats": cmd_stats,
    "grid": cmd_grid, "synth": cmd_synth,
}


def parse_config(args: argparse.Namespace) -> RunConfig:
    overrides = {k: v for k, v in vars(args).items() if k in field_index()}
    file_values = load_file(args.config) if args.config else None
    return build_config(file_values, overrides)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = parse_config(args)
    except (OSError, ValueError, TypeError) as exc:
        print(f"topicflow: config error: {exc}", file=sys.stderr)
        return 1
    try:
        HANDLERS[args.command](cfg, args)
    except (UsageError, P.MissingArgument) as exc:
        print(f"topicflow {args.command}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("failure", exc_info=True)
        print(f"topicflow {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
