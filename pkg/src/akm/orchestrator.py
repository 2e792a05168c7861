"""Workflow execution: the agentic pipeline with its two bounded refinement
loops, the single-prompt baseline, artifact persistence, and replay."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import IO, Optional

from akm.agents import AgentOutputError, AgentSuite, AdrSetDraft, render_summary
from akm.config import ConfigError, WorkflowConfig, api_key_from_env
from akm.extractor import PackedContext, pack_context, rank_files, scan_repo
from akm.gateway import (
    Backend,
    Gateway,
    GatewayError,
    OpenAiBackend,
    ScriptedBackend,
    no_sleep,
    script_from_dicts,
)
from akm.model import (
    Adr,
    AdrStatus,
    RepoSummary,
    RunStatus,
    SourceConfig,
    StageRecord,
    WorkflowRun,
    adr_filename,
    render_adr,
    stamp_adrs,
    validate_adr_set,
)
from akm.retrieval import EmbeddedDoc, HashingEmbedder, VectorStore, build_embedder

logger = logging.getLogger(__name__)

RUN_JSON = "run.json"
EVENTS_JSONL = "events.jsonl"
ADR_DIR = "adr"

WARNING_SUMMARY_UNVALIDATED = "summary unvalidated"
WARNING_ADRS_UNVALIDATED = "adrs unvalidated"


class ReplayError(Exception):
    pass


def build_backend(config: WorkflowConfig) -> Backend:
    llm = config.llm
    if llm.provider == "scripted":
        if llm.script_path is None:
            raise ConfigError("llm.provider is 'scripted' but llm.script_path is not set")
        items = json.loads(Path(llm.script_path).read_text(encoding="utf-8"))
        if not isinstance(items, list):
            raise ConfigError("script file must contain a JSON array of steps")
        return ScriptedBackend(script_from_dicts(items))
    if llm.provider == "openai":
        api_key = api_key_from_env()
        if not api_key:
            raise ConfigError("live provider requires the AKM_LLM_API_KEY environment variable")
        return OpenAiBackend(api_key=api_key, api_base=llm.api_base, timeout_s=llm.timeout_s)
    raise ConfigError(f"unknown llm.provider {llm.provider!r}")


def build_gateway(config: WorkflowConfig, backend: Optional[Backend] = None) -> Gateway:
    backend = backend if backend is not None else build_backend(config)
    # Scripted runs must not touch the wall clock; retry accounting is unchanged.
    sleep = no_sleep if isinstance(backend, ScriptedBackend) else time.sleep
    return Gateway(backend=backend, retry_budget=config.llm.retry_budget, sleep=sleep)


def compute_run_id(repo_path: str, config: WorkflowConfig) -> str:
    """Deterministic id: same repo + same config (output dir aside) => same id."""
    snapshot = config.to_dict()
    snapshot.pop("output_dir", None)
    digest = hashlib.sha256(
        json.dumps({"repo": repo_path, "config": snapshot}, sort_keys=True).encode("utf-8")
    ).hexdigest()
    return f"{config.pipeline}-{digest[:12]}"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


class _Runner:
    """Single strictly-sequential run against one output directory."""

    def __init__(self, repo_path: str | Path, config: WorkflowConfig, backend: Optional[Backend] = None):
        self.repo_path = Path(repo_path)
        self.config = config
        self.gateway = build_gateway(config, backend)
        self.out_dir = Path(config.output_dir)
        self.stages: list[StageRecord] = []
        self.warnings: list[str] = []
        self._events_fh: Optional[IO[str]] = None
        if config.retrieval.embedder == "hashing":
            embedder = HashingEmbedder()
        else:
            embedder = build_embedder(
                config.retrieval.embedder,
                api_key=api_key_from_env(),
                model_id=config.retrieval.model_id,
                api_base=config.llm.api_base,
            )
        self.embedder = embedder
        self.suite = AgentSuite(
            self.gateway,
            model_id=config.llm.model_id,
            max_output_tokens=config.llm.max_output_tokens,
            temperature=config.llm.temperature,
            template_overrides=config.agents or None,
            embedder=embedder if isinstance(embedder, HashingEmbedder) else HashingEmbedder(),
        )
        self.store = self._load_store()

    def _load_store(self) -> VectorStore:
        path = self.config.retrieval.store_path
        if path and Path(path).exists():
            return VectorStore.load(path)
        return VectorStore()

    # -- persistence --------------------------------------------------------

    def _open_outputs(self) -> None:
        adr_dir = self.out_dir / ADR_DIR
        adr_dir.mkdir(parents=True, exist_ok=True)
        for stale in adr_dir.glob("*.md"):
            stale.unlink()
        self._events_fh = open(self.out_dir / EVENTS_JSONL, "w", encoding="utf-8", newline="\n")

    def _record(self, record: StageRecord) -> None:
        self.stages.append(record)
        assert self._events_fh is not None
        self._events_fh.write(json.dumps(record.to_dict(), sort_keys=True, ensure_ascii=False) + "\n")
        self._events_fh.flush()

    def _close_outputs(self) -> None:
        if self._events_fh is not None:
            self._events_fh.close()
            self._events_fh = None

    def _write_adr_files(self, adrs: list[Adr]) -> None:
        validate_adr_set(adrs)
        for adr in adrs:
            path = self.out_dir / ADR_DIR / adr_filename(adr)
            path.write_text(render_adr(adr), encoding="utf-8", newline="\n")

    def _finish(self, status: RunStatus, adrs: list[Adr], started_at: str,
                error: Optional[str] = None) -> WorkflowRun:
        run = WorkflowRun(
            run_id=compute_run_id(str(self.repo_path), self.config),
            repo_path=str(self.repo_path),
            config_snapshot=self.config.to_dict(),
            stages=self.stages,
            final_adrs=adrs,
            status=status,
            started_at=started_at,
            ended_at=_now(),
            warnings=self.warnings,
            error=error,
        )
        (self.out_dir / RUN_JSON).write_text(
            json.dumps(run.to_dict(), sort_keys=True, ensure_ascii=False, indent=2) + "\n",
            encoding="utf-8",
            newline="\n",
        )
        return run

    # -- pipeline steps ------------------------------------------------------

    def _pack(self) -> PackedContext:
        files = scan_repo(
            self.repo_path,
            max_file_bytes=self.config.extract.max_file_bytes,
            extra_ignores=self.config.extract.extra_ignores,
        )
        text_files = [f for f in files if not f.is_binary]
        ranked = rank_files(text_files, self.config.extract.weights)
        return pack_context(self.repo_path, ranked, self.config.extract.budget_tokens)

    def _summary_loop(self, context: PackedContext) -> tuple[Optional[RepoSummary], bool]:
        """Returns (last parseable summary, accepted?)."""
        summary: Optional[RepoSummary] = None
        issues: Optional[list[str]] = None
        for iteration in range(1, self.config.max_iterations + 1):
            try:
                candidate, record = self.suite.summarize_repo(
                    context, issues, revision=iteration, iteration=iteration
                )
            except AgentOutputError as exc:
                self._record(exc.record)
                logger.warning("summary iteration %d unparseable: %s", iteration, exc)
                issues = [str(exc)]
                continue
            self._record(record)
            summary = candidate
            verdict, v_record = self.suite.validate_summary(summary, context, iteration=iteration)
            self._record(v_record)
            if verdict.accepted:
                logger.info("summary accepted on iteration %d", iteration)
                return summary, True
            issues = list(verdict.issues)
            logger.info("summary rejected on iteration %d: %s", iteration, issues)
        return summary, False

    def _adr_loop(self, summary: RepoSummary) -> tuple[Optional[AdrSetDraft], bool, Optional[int]]:
        """Returns (last parseable draft, accepted?, iteration that produced it)."""
        retrieved = self._retrieve_for(summary)
        draft: Optional[AdrSetDraft] = None
        draft_iteration: Optional[int] = None
        issues: Optional[list[str]] = None
        for iteration in range(1, self.config.max_iterations + 1):
            try:
                candidate, record = self.suite.generate_adrs(
                    summary, retrieved, issues, iteration=iteration
                )
            except AgentOutputError as exc:
                self._record(exc.record)
                logger.warning("ADR iteration %d unparseable: %s", iteration, exc)
                issues = [str(exc)]
                continue
            self._record(record)
            draft = candidate
            draft_iteration = iteration
            verdict, v_record = self.suite.validate_adrs(
                draft, summary, self.store.docs(), iteration=iteration
            )
            self._record(v_record)
            if verdict.accepted:
                logger.info("ADR set accepted on iteration %d", iteration)
                return draft, True, iteration
            issues = list(verdict.issues)
            logger.info("ADR set rejected on iteration %d: %s", iteration, issues)
        return draft, False, draft_iteration

    def _retrieve_for(self, summary: RepoSummary) -> list[EmbeddedDoc]:
        if len(self.store) == 0:
            return []
        query = self.embedder.embed(render_summary(summary))
        hits = self.store.search(query, k=self.config.retrieval.k)
        docs = [self.store.get(h.doc_id) for h in hits]
        return [d for d in docs if d is not None]

    def _index_outputs(self, adrs: list[Adr]) -> None:
        store_path = self.config.retrieval.store_path
        if not self.config.retrieval.index_outputs or not store_path:
            return
        for adr in adrs:
            if adr.status is not AdrStatus.ACCEPTED:
                continue
            text = render_adr(adr)
            vector = self.embedder.embed(f"{adr.title}\n{adr.context}\n{adr.decision}")
            self.store.add(
                EmbeddedDoc.from_vector(
                    doc_id=adr_filename(adr), text=text, vector=vector,
                    metadata={"title": adr.title},
                )
            )
        self.store.save(store_path)

    # -- pipelines -----------------------------------------------------------

    def run_agentic(self) -> WorkflowRun:
        started_at = _now()
        self._open_outputs()
        try:
            context = self._pack()
            summary, summary_accepted = self._summary_loop(context)
            if summary is None:
                return self._finish(RunStatus.FAILED, [], started_at,
                                    error="no parseable summary produced within the iteration budget")
            if not summary_accepted:
                self.warnings.append(WARNING_SUMMARY_UNVALIDATED)

            draft, adrs_accepted, draft_iteration = self._adr_loop(summary)
            if draft is None:
                return self._finish(RunStatus.FAILED, [], started_at,
                                    error="no parseable ADR set produced within the iteration budget")
            if not adrs_accepted:
                self.warnings.append(WARNING_ADRS_UNVALIDATED)

            provenance = [f"generate-adrs:{draft_iteration}"]
            if any(s.stage_name.value == "validate-adrs" and s.iteration == draft_iteration
                   for s in self.stages):
                provenance.append(f"validate-adrs:{draft_iteration}")
            final = stamp_adrs(
                list(draft.adrs),
                status=AdrStatus.ACCEPTED if adrs_accepted else AdrStatus.UNVALIDATED,
                source_config=SourceConfig.AGENTIC,
                provenance=tuple(provenance),
            )
            self._write_adr_files(final)
            self._index_outputs(final)
            status = RunStatus.COMPLETED if not self.warnings else RunStatus.COMPLETED_WITH_WARNINGS
            return self._finish(status, final, started_at)
        except GatewayError as exc:
            return self._finish(RunStatus.FAILED, [], started_at, error=f"{self._stage_context()}: {exc}")
        finally:
            self._close_outputs()

    def run_baseline(self) -> WorkflowRun:
        started_at = _now()
        self._open_outputs()
        try:
            context = self._pack()
            try:
                draft, record = self.suite.generate_baseline(context)
            except AgentOutputError as exc:
                self._record(exc.record)
                return self._finish(RunStatus.FAILED, [], started_at, error=str(exc))
            self._record(record)
            final = stamp_adrs(
                list(draft.adrs),
                status=AdrStatus.PROPOSED,
                source_config=SourceConfig.BASELINE,
                provenance=("baseline:1",),
            )
            self._write_adr_files(final)
            return self._finish(RunStatus.COMPLETED, final, started_at)
        except GatewayError as exc:
            return self._finish(RunStatus.FAILED, [], started_at, error=f"{self._stage_context()}: {exc}")
        finally:
            self._close_outputs()

    def _stage_context(self) -> str:
        """Name the stage the next gateway call belonged to, from the audit trail."""
        if not self.stages:
            return "stage summarize iteration 1" if self.config.pipeline == "agentic" else "stage baseline iteration 1"
        last = self.stages[-1]
        name, iteration = _next_expected_stage(last, self.config.max_iterations)
        return f"stage {name} iteration {iteration}"


def _next_expected_stage(last: StageRecord, max_iterations: int) -> tuple[str, int]:
    """The stage that follows ``last`` in the agentic state machine."""
    stage = last.stage_name.value
    if stage == "summarize":
        return "validate-summary", last.iteration
    if stage == "validate-summary":
        if last.verdict is not None and last.verdict.accepted:
            return "generate-adrs", 1
        if last.iteration < max_iterations:
            return "summarize", last.iteration + 1
        return "generate-adrs", 1
    if stage == "generate-adrs":
        return "validate-adrs", last.iteration
    if stage == "validate-adrs":
        return "generate-adrs", last.iteration + 1
    return "baseline", 1


def run_agentic(repo_path: str | Path, config: WorkflowConfig,
                backend: Optional[Backend] = None) -> WorkflowRun:
    if config.pipeline != "agentic":
        config = replace(config, pipeline="agentic")
    return _Runner(repo_path, config, backend).run_agentic()


def run_baseline(repo_path: str | Path, config: WorkflowConfig,
                 backend: Optional[Backend] = None) -> WorkflowRun:
    if config.pipeline != "baseline":
        config = replace(config, pipeline="baseline")
    return _Runner(repo_path, config, backend).run_baseline()


def run_workflow(repo_path: str | Path, config: WorkflowConfig,
                 backend: Optional[Backend] = None) -> WorkflowRun:
    if config.pipeline == "baseline":
        return run_baseline(repo_path, config, backend)
    return run_agentic(repo_path, config, backend)


def load_run(run_dir: str | Path) -> tuple[WorkflowRun, list[StageRecord]]:
    run_dir = Path(run_dir)
    run_path = run_dir / RUN_JSON
    events_path = run_dir / EVENTS_JSONL
    if not run_path.exists() or not events_path.exists():
        raise ReplayError(f"run directory {run_dir} must contain {RUN_JSON} and {EVENTS_JSONL}")
    run = WorkflowRun.from_dict(json.loads(run_path.read_text(encoding="utf-8")))
    records = []
    for line_no, line in enumerate(events_path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(StageRecord.from_dict(json.loads(line)))
        except (ValueError, KeyError) as exc:
            raise ReplayError(f"{EVENTS_JSONL} line {line_no}: {exc}") from exc
    return run, records


def replay(run_record_path: str | Path, output_dir: str | Path) -> WorkflowRun:
    """Re-execute a recorded run, feeding its responses back as the script.

    Output artifacts are byte-identical to the original (timestamps aside).
    A tampered or truncated record surfaces as a :class:`ReplayError`
    naming the first stage where the replay diverges.
    """
    original, records = load_run(run_record_path)
    config = WorkflowConfig.from_dict(original.config_snapshot)
    config = replace(config, output_dir=str(output_dir))
    backend = ScriptedBackend.from_replies([r.response for r in records])

    replayed = run_workflow(original.repo_path, config, backend=backend)

    for recorded, fresh in zip(records, replayed.stages):
        if (recorded.stage_name, recorded.iteration) != (fresh.stage_name, fresh.iteration):
            raise ReplayError(
                f"replay diverged at stage {fresh.stage_name.value} iteration {fresh.iteration} "
                f"(recorded: {recorded.stage_name.value} iteration {recorded.iteration})"
            )
    if len(replayed.stages) < len(records):
        missing = records[len(replayed.stages)]
        raise ReplayError(
            f"recorded events exceed the replayed path; first unused record is stage "
            f"{missing.stage_name.value} iteration {missing.iteration}"
        )
    if replayed.status is RunStatus.FAILED and original.status is not RunStatus.FAILED:
        raise ReplayError(
            f"recorded responses insufficient for the control path: {replayed.error}"
        )
    return replayed
