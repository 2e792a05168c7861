"""Command-line surface.

Exit codes are a function of outcome only: 0 completed, 2 completed with
warnings, 1 failed, 64 usage error. stdout carries machine-readable
summaries; progress and errors go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from akm.config import ConfigError, WorkflowConfig
from akm.model import AdrParseError, RunStatus, parse_adr, render_adr
from akm.orchestrator import ReplayError, replay, run_agentic, run_baseline
from akm.retrieval import EmbeddedDoc, HashingEmbedder, StoreError, VectorStore
from akm.study import (
    StudyError,
    aggregate,
    build_study_bundle,
    load_keys_dir,
    load_ratings_csv,
    render_report_table,
    write_report,
)
from akm.templates import TemplateError

logger = logging.getLogger("akm")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_WARNINGS = 2
EXIT_USAGE = 64

_STATUS_EXIT = {
    RunStatus.COMPLETED: EXIT_OK,
    RunStatus.COMPLETED_WITH_WARNINGS: EXIT_WARNINGS,
    RunStatus.FAILED: EXIT_FAILED,
}


class UsageError(Exception):
    pass


class _StderrHandler(logging.StreamHandler):
    """Resolves sys.stderr at emit time, so redirection always works."""

    @property
    def stream(self):  # type: ignore[override]
        return sys.stderr

    @stream.setter
    def stream(self, value) -> None:
        pass


def _configure_logging() -> None:
    root = logging.getLogger("akm")
    if not any(isinstance(h, _StderrHandler) for h in root.handlers):
        handler = _StderrHandler()
        handler.setFormatter(logging.Formatter("%(message)s"))
        root.addHandler(handler)
        root.setLevel(logging.INFO)
        root.propagate = False


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="akm", description="Generate and evaluate architecture decision records.")
    sub = parser.add_subparsers(dest="command", required=True)

    generate = sub.add_parser("generate", help="run the agentic pipeline against a repository")
    generate.add_argument("--repo", required=True, help="repository root to analyze")
    generate.add_argument("--out", required=True, help="output directory for ADRs and the audit log")
    generate.add_argument("--config", help="JSON config file")
    generate.add_argument("--max-iterations", type=int, help="refinement loop bound (default 3)")

    baseline = sub.add_parser("baseline", help="run the single-prompt baseline pipeline")
    baseline.add_argument("--repo", required=True)
    baseline.add_argument("--out", required=True)
    baseline.add_argument("--config", help="JSON config file")

    index = sub.add_parser("index", help="index ADR markdown files into a vector store")
    index.add_argument("--store", required=True, help="store file (created if missing)")
    index.add_argument("--adr-dir", required=True, help="directory of *.md ADR files")

    search = sub.add_parser("search", help="query a vector store")
    search.add_argument("--store", required=True)
    search.add_argument("--query", required=True)
    search.add_argument("-k", type=int, default=3)

    study = sub.add_parser("study", help="build a blinded four-configuration study bundle")
    study.add_argument("--repo", required=True)
    study.add_argument("--out", required=True)
    study.add_argument("--seed", type=int, required=True)
    study.add_argument("--models", required=True, help="comma-separated list of exactly two model ids")
    study.add_argument("--config", help="JSON config file")

    report = sub.add_parser("report", help="aggregate ratings into a per-identity report")
    report.add_argument("--ratings", required=True, help="ratings CSV file")
    report.add_argument("--keys", required=True, help="directory of per-repo key files")
    report.add_argument("--out", help="directory for report.json and report.txt")

    rep = sub.add_parser("replay", help="re-execute a recorded run from its audit log")
    rep.add_argument("--run", required=True, help="directory containing run.json and events.jsonl")
    rep.add_argument("--out", required=True, help="output directory for the replayed artifacts")

    return parser


def _load_config(config_path: Optional[str]) -> WorkflowConfig:
    if config_path is None:
        return WorkflowConfig()
    return WorkflowConfig.load(config_path)


def _emit(summary: dict) -> None:
    print(json.dumps(summary, sort_keys=True))


def _run_summary(run) -> dict:
    return {
        "run_json": str(Path(run.config_snapshot["output_dir"]) / "run.json"),
        "adr_count": len(run.final_adrs),
        "status": run.status.value,
        "warnings": run.warnings,
    }


def _cmd_generate(args: argparse.Namespace) -> int:
    if not Path(args.repo).is_dir():
        raise UsageError(f"--repo {args.repo!r} is not a directory")
    config = _load_config(args.config).with_overrides(
        output_dir=args.out, max_iterations=args.max_iterations
    )
    run = run_agentic(args.repo, config)
    logger.info("run %s finished with status %s", run.run_id, run.status.value)
    if run.error:
        logger.error("%s", run.error)
    _emit(_run_summary(run))
    return _STATUS_EXIT[run.status]


def _cmd_baseline(args: argparse.Namespace) -> int:
    if not Path(args.repo).is_dir():
        raise UsageError(f"--repo {args.repo!r} is not a directory")
    config = _load_config(args.config).with_overrides(output_dir=args.out)
    run = run_baseline(args.repo, config)
    logger.info("run %s finished with status %s", run.run_id, run.status.value)
    if run.error:
        logger.error("%s", run.error)
    _emit(_run_summary(run))
    return _STATUS_EXIT[run.status]


def _cmd_index(args: argparse.Namespace) -> int:
    adr_dir = Path(args.adr_dir)
    if not adr_dir.is_dir():
        raise UsageError(f"--adr-dir {args.adr_dir!r} is not a directory")
    store_path = Path(args.store)
    store = VectorStore.load(store_path) if store_path.exists() else VectorStore()
    embedder = HashingEmbedder()
    indexed, skipped = 0, 0
    for path in sorted(adr_dir.glob("*.md")):
        try:
            adr = parse_adr(path.read_text(encoding="utf-8"))
        except AdrParseError as exc:
            logger.error("skipping %s: %s", path.name, exc)
            skipped += 1
            continue
        vector = embedder.embed(f"{adr.title}\n{adr.context}\n{adr.decision}")
        store.add(
            EmbeddedDoc.from_vector(
                doc_id=path.name,
                text=render_adr(adr),
                vector=vector,
                metadata={"title": adr.title, "path": str(path)},
            )
        )
        indexed += 1
    store.save(store_path)
    _emit({"indexed": indexed, "skipped": skipped, "store": str(store_path), "size": len(store)})
    return EXIT_WARNINGS if skipped else EXIT_OK


def _cmd_search(args: argparse.Namespace) -> int:
    store_path = Path(args.store)
    if not store_path.exists():
        raise UsageError(f"--store {args.store!r} does not exist")
    if args.k < 1:
        raise UsageError("-k must be positive")
    store = VectorStore.load(store_path)
    query = HashingEmbedder().embed(args.query)
    for hit in store.search(query, k=args.k):
        doc = store.get(hit.doc_id)
        title = doc.metadata.get("title", "") if doc else ""
        print(f"{hit.score:.4f}\t{hit.doc_id}\t{title}")
    return EXIT_OK


def _cmd_study(args: argparse.Namespace) -> int:
    if not Path(args.repo).is_dir():
        raise UsageError(f"--repo {args.repo!r} is not a directory")
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    if len(models) != 2 or len(set(models)) != 2:
        raise UsageError("--models must list exactly two distinct model ids")
    base = _load_config(args.config)
    configs = [
        base.with_identity(pipeline, model)
        for pipeline in ("agentic", "baseline")
        for model in models
    ]
    out = build_study_bundle(args.repo, configs, seed=args.seed, out_dir=args.out)
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    _emit({
        "bundle_dir": str(out / "bundle"),
        "key_json": str(out / "key.json"),
        "complete": manifest["complete"],
    })
    return EXIT_OK if manifest["complete"] else EXIT_FAILED


def _cmd_report(args: argparse.Namespace) -> int:
    ratings = load_ratings_csv(args.ratings)
    keys = load_keys_dir(args.keys)
    report = aggregate(ratings, keys)
    if args.out:
        json_path, txt_path = write_report(report, args.out)
        logger.info("wrote %s and %s", json_path, txt_path)
    sys.stdout.write(render_report_table(report))
    return EXIT_OK


def _cmd_replay(args: argparse.Namespace) -> int:
    run = replay(args.run, args.out)
    logger.info("replayed run %s with status %s", run.run_id, run.status.value)
    _emit(_run_summary(run))
    return _STATUS_EXIT[run.status]


_COMMANDS = {
    "generate": _cmd_generate,
    "baseline": _cmd_baseline,
    "index": _cmd_index,
    "search": _cmd_search,
    "study": _cmd_study,
    "report": _cmd_report,
    "replay": _cmd_replay,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    _configure_logging()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, TemplateError, StudyError, StoreError, ReplayError,
            FileNotFoundError, NotADirectoryError) as exc:
        logger.error("%s", exc)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
