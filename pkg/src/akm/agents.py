"""The four workflow agents: prompt construction and reply parsing.

Each agent is a prompt template plus an output grammar around the gateway.
Verdict parsing is fail-closed: nothing counts as an acceptance unless the
reply carries the exact ``VERDICT: ACCEPT`` line.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

from akm.extractor import PackedContext
from akm.gateway import ChatRequest, Gateway
from akm.model import (
    Adr,
    AdrParseError,
    AdrStatus,
    AdrValidationError,
    Component,
    RepoSummary,
    SourceConfig,
    StageName,
    StageRecord,
    validate_adr,
    ValidationVerdict,
)
from akm.retrieval import EmbeddedDoc, HashingEmbedder, VectorStore
from akm.templates import check_template, load_template, render_template

logger = logging.getLogger(__name__)

ADR_DELIMITER = "=== ADR ==="
SUMMARY_MARKERS = ("OVERVIEW:", "COMPONENTS:", "TECHNOLOGIES:", "DECISION_HINTS:")
UNPARSEABLE_VERDICT_ISSUE = "unparseable validator output"
UNSPECIFIED_REJECTION_ISSUE = "unspecified rejection"


class OutputGrammar(str, Enum):
    SUMMARY = "summary"
    VERDICT = "verdict"
    ADR_SET = "adr_set"


@dataclass(frozen=True)
class AgentSpec:
    name: str
    role_description: str
    prompt_template: str
    output_grammar: OutputGrammar


@dataclass(frozen=True)
class AdrSetDraft:
    """Generator output: proposed records, plus any preamble kept as notes."""

    adrs: tuple[Adr, ...]
    generator_notes: str = ""


class AgentOutputError(Exception):
    """An agent reply did not match its grammar.

    Carries the exchange's :class:`StageRecord` so the audit trail keeps
    the failed attempt.
    """

    def __init__(self, message: str, record: StageRecord):
        super().__init__(message)
        self.record = record


# ---------------------------------------------------------------------------
# prompt building blocks


def render_issues_block(issues: Optional[list[str]]) -> str:
    if not issues:
        return ""
    lines = ["The previous attempt was rejected. Address every issue below:"]
    lines.extend(f"- {issue}" for issue in issues)
    return "\n".join(lines)


def _context_text(context: PackedContext) -> str:
    return context.render() or "(the repository contains no readable files)\n"


def render_retrieved_block(texts: list[str]) -> str:
    if not texts:
        return ""
    return "\n\n".join(["Existing recorded decisions:"] + list(texts))


def render_summary(summary: RepoSummary) -> str:
    lines = [f"OVERVIEW: {summary.overview}", "COMPONENTS:"]
    lines.extend(f"- {c.name}: {c.responsibility}" for c in summary.components)
    lines.append("TECHNOLOGIES:")
    lines.extend(f"- {t}" for t in summary.technologies)
    lines.append("DECISION_HINTS:")
    lines.extend(f"- {h}" for h in summary.decision_hints)
    return "\n".join(lines)


def render_adr_block(adr: Adr) -> str:
    """The generator grammar for one record: title without an id, no status line."""
    return "\n\n".join(
        [
            f"# {adr.title}",
            f"## Context\n{adr.context}",
            f"## Decision\n{adr.decision}",
            f"## Consequences\n{adr.consequences}",
        ]
    )


def render_adr_set(adrs: tuple[Adr, ...] | list[Adr]) -> str:
    return "\n".join(f"{ADR_DELIMITER}\n{render_adr_block(a)}" for a in adrs)


# ---------------------------------------------------------------------------
# reply grammars


class ReplyParseError(ValueError):
    pass


def parse_summary_reply(text: str, revision: int = 1) -> RepoSummary:
    """Parse the four-marker summary grammar.

    All four markers must appear, in order. Bullet lines (``- ``) fill the
    list sections; other stray lines inside list sections are ignored.
    """
    lines = text.splitlines()
    marker_at: dict[str, int] = {}
    for idx, line in enumerate(lines):
        stripped = line.strip()
        for marker in SUMMARY_MARKERS:
            if stripped.startswith(marker) and marker not in marker_at:
                marker_at[marker] = idx
    for marker in SUMMARY_MARKERS:
        if marker not in marker_at:
            raise ReplyParseError(f"missing required marker {marker!r}")
    positions = [marker_at[m] for m in SUMMARY_MARKERS]
    if positions != sorted(positions):
        raise ReplyParseError("summary markers out of order")

    def section_lines(marker_index: int) -> list[str]:
        start = positions[marker_index]
        end = positions[marker_index + 1] if marker_index + 1 < len(positions) else len(lines)
        return lines[start:end]

    overview_lines = section_lines(0)
    overview = "\n".join(
        [overview_lines[0].strip()[len("OVERVIEW:"):].strip()] + overview_lines[1:]
    ).strip()
    if not overview:
        raise ReplyParseError("OVERVIEW section is empty")

    def bullets(marker_index: int) -> list[str]:
        items = []
        for line in section_lines(marker_index)[1:]:
            stripped = line.strip()
            if stripped.startswith("- "):
                items.append(stripped[2:].strip())
        return items

    components = []
    for item in bullets(1):
        name, _, responsibility = item.partition(":")
        if not name.strip():
            raise ReplyParseError(f"component entry with empty name: {item!r}")
        components.append(Component(name=name.strip(), responsibility=responsibility.strip()))

    return RepoSummary(
        overview=overview,
        components=tuple(components),
        technologies=tuple(t for t in bullets(2) if t),
        decision_hints=tuple(h for h in bullets(3) if h),
        revision=revision,
    )


def parse_verdict_reply(text: str) -> ValidationVerdict:
    """Fail-closed verdict grammar.

    Only a line reading exactly ``VERDICT: ACCEPT`` accepts; anything else,
    including an absent verdict line, is a rejection.
    """
    verdict: Optional[bool] = None
    issues: list[str] = []
    for line in text.splitlines():
        stripped = line.strip()
        if verdict is None and stripped == "VERDICT: ACCEPT":
            verdict = True
        elif verdict is None and stripped == "VERDICT: REJECT":
            verdict = False
        elif stripped.startswith("ISSUE: "):
            issues.append(stripped[len("ISSUE: "):])
    if verdict is None:
        return ValidationVerdict(accepted=False, issues=(UNPARSEABLE_VERDICT_ISSUE,), raw_response=text)
    if verdict:
        return ValidationVerdict(accepted=True, issues=(), raw_response=text)
    if not issues:
        issues = [UNSPECIFIED_REJECTION_ISSUE]
    return ValidationVerdict(accepted=False, issues=tuple(issues), raw_response=text)


def _parse_block(block: str, adr_id: int, block_index: int) -> Adr:
    lines = block.split("\n")
    if not lines or not lines[0].startswith("# "):
        raise ReplyParseError(f"block {block_index}: expected a '# <title>' line first")
    title = lines[0][2:].strip()
    headings = {"## Context": None, "## Decision": None, "## Consequences": None}
    order: list[tuple[int, str]] = []
    for idx, line in enumerate(lines):
        if line.startswith("## "):
            if line not in headings:
                raise ReplyParseError(f"block {block_index}: unknown heading {line!r}")
            if headings[line] is not None:
                raise ReplyParseError(f"block {block_index}: duplicate heading {line!r}")
            headings[line] = idx
            order.append((idx, line))
    for heading in headings:
        if headings[heading] is None:
            raise ReplyParseError(f"block {block_index}: missing section {heading!r}")
    if [h for _, h in order] != list(headings):
        raise ReplyParseError(f"block {block_index}: sections out of order")

    bodies: dict[str, str] = {}
    for n, (idx, heading) in enumerate(order):
        end = order[n + 1][0] if n + 1 < len(order) else len(lines)
        bodies[heading] = "\n".join(lines[idx + 1 : end]).strip()

    try:
        adr = Adr(
            id=adr_id,
            title=title,
            status=AdrStatus.PROPOSED,
            context=bodies["## Context"],
            decision=bodies["## Decision"],
            consequences=bodies["## Consequences"],
        )
        validate_adr(adr)
    except AdrValidationError as exc:
        raise ReplyParseError(f"block {block_index}: {exc}") from exc
    return adr


def parse_adr_set_reply(text: str, source_config: SourceConfig = SourceConfig.AGENTIC) -> AdrSetDraft:
    """Parse blocks that each begin with an ``=== ADR ===`` delimiter line.

    Ids are assigned sequentially from 1 and status is forced to
    ``proposed``; both are workflow state the model does not control.
    Prose before the first delimiter is kept as generator notes, unless it
    looks like a record itself (a lost block must not vanish silently).
    """
    segments: list[list[str]] = [[]]
    for line in text.splitlines():
        if line.strip() == ADR_DELIMITER:
            segments.append([])
        else:
            segments[-1].append(line)
    notes = "\n".join(segments[0]).strip()
    if notes and any(l.startswith(("# ", "## ")) for l in notes.splitlines()):
        raise ReplyParseError("record-like content before the first delimiter line")
    blocks = ["\n".join(seg).strip() for seg in segments[1:]]
    if not blocks:
        raise ReplyParseError("no record blocks found in reply")
    adrs = []
    for index, block in enumerate(blocks, start=1):
        if not block:
            raise ReplyParseError(f"block {index}: empty block after delimiter")
        adr = _parse_block(block, adr_id=len(adrs) + 1, block_index=index)
        adrs.append(replace(adr, source_config=source_config))
    return AdrSetDraft(adrs=tuple(adrs), generator_notes=notes)


# ---------------------------------------------------------------------------
# the suite


ROLE_DESCRIPTIONS = {
    "summarizer": "You analyze software repositories and produce concise, accurate architecture summaries.",
    "summary_validator": "You review architecture summaries for accuracy against the underlying code.",
    "adr_generator": "You write architecture decision records grounded in an architecture summary.",
    "adr_validator": "You review architecture decision records for consistency, format, and quality.",
    "baseline": "You write architecture decision records for a software repository.",
}

AGENT_DISPLAY_NAMES = {
    "summarizer": "repo-summarizer",
    "summary_validator": "summary-validator",
    "adr_generator": "adr-generator",
    "adr_validator": "adr-validator",
    "baseline": "baseline-generator",
}

_GRAMMARS = {
    "summarizer": OutputGrammar.SUMMARY,
    "summary_validator": OutputGrammar.VERDICT,
    "adr_generator": OutputGrammar.ADR_SET,
    "adr_validator": OutputGrammar.VERDICT,
    "baseline": OutputGrammar.ADR_SET,
}


def build_agent_specs(template_overrides: Optional[dict[str, Optional[str]]] = None) -> dict[str, AgentSpec]:
    overrides = template_overrides or {}
    specs: dict[str, AgentSpec] = {}
    for name, grammar in _GRAMMARS.items():
        template = load_template(name, overrides.get(name))
        check_template(name, template)
        specs[name] = AgentSpec(
            name=AGENT_DISPLAY_NAMES[name],
            role_description=ROLE_DESCRIPTIONS[name],
            prompt_template=template,
            output_grammar=grammar,
        )
    if len({s.name for s in specs.values()}) != len(specs):
        raise ValueError("agent names must be unique")
    return specs


class AgentSuite:
    """Stateless workflow agents sharing one gateway.

    Every call issues exactly one gateway request and yields exactly one
    :class:`StageRecord`; prompt construction is a pure function of the
    templates and inputs.
    """

    def __init__(
        self,
        gateway: Gateway,
        *,
        model_id: str = "mock-model",
        max_output_tokens: int = 2048,
        temperature: float = 0.0,
        template_overrides: Optional[dict[str, Optional[str]]] = None,
        embedder: Optional[HashingEmbedder] = None,
    ):
        self.gateway = gateway
        self.model_id = model_id
        self.max_output_tokens = max_output_tokens
        self.temperature = temperature
        self.specs = build_agent_specs(template_overrides)
        self.embedder = embedder or HashingEmbedder()

    def _call(self, agent_key: str, stage: StageName, iteration: int,
              values: dict[str, str]) -> tuple[str, StageRecord]:
        spec = self.specs[agent_key]
        prompt = render_template(spec.prompt_template, values)
        request = ChatRequest(
            system_prompt=spec.role_description,
            user_prompt=prompt,
            temperature=self.temperature,
            max_output_tokens=self.max_output_tokens,
            model_id=self.model_id,
        )
        response = self.gateway.complete(request)
        record = StageRecord(
            stage_name=stage,
            iteration=iteration,
            agent_name=spec.name,
            prompt=prompt,
            response=response.text,
            token_estimate=response.input_token_estimate + response.output_token_estimate,
        )
        return response.text, record

    def summarize_repo(
        self,
        context: PackedContext,
        prior_issues: Optional[list[str]] = None,
        *,
        revision: int = 1,
        iteration: int = 1,
    ) -> tuple[RepoSummary, StageRecord]:
        values = {
            "repo_context": _context_text(context),
            "issues": render_issues_block(prior_issues),
        }
        text, record = self._call("summarizer", StageName.SUMMARIZE, iteration, values)
        try:
            summary = parse_summary_reply(text, revision=revision)
        except (ReplyParseError, ValueError) as exc:
            raise AgentOutputError(f"summary reply unparseable: {exc}", record) from exc
        return summary, record

    def validate_summary(
        self,
        summary: RepoSummary,
        context: PackedContext,
        *,
        iteration: int = 1,
    ) -> tuple[ValidationVerdict, StageRecord]:
        values = {
            "summary": render_summary(summary),
            "repo_context": _context_text(context),
        }
        text, record = self._call("summary_validator", StageName.VALIDATE_SUMMARY, iteration, values)
        verdict = parse_verdict_reply(text)
        return verdict, replace(record, verdict=verdict)

    def generate_adrs(
        self,
        summary: RepoSummary,
        retrieved: list[EmbeddedDoc],
        prior_issues: Optional[list[str]] = None,
        *,
        iteration: int = 1,
    ) -> tuple[AdrSetDraft, StageRecord]:
        values = {
            "summary": render_summary(summary),
            "retrieved": render_retrieved_block([d.text for d in retrieved]),
            "issues": render_issues_block(prior_issues),
        }
        text, record = self._call("adr_generator", StageName.GENERATE_ADRS, iteration, values)
        try:
            draft = parse_adr_set_reply(text, source_config=SourceConfig.AGENTIC)
        except ReplyParseError as exc:
            raise AgentOutputError(f"generator reply unparseable: {exc}", record) from exc
        return draft, record

    def validate_adrs(
        self,
        draft: AdrSetDraft,
        summary: RepoSummary,
        existing: list[EmbeddedDoc],
        *,
        iteration: int = 1,
    ) -> tuple[ValidationVerdict, StageRecord]:
        nearest = self._nearest_existing(draft, existing)
        values = {
            "adrs": render_adr_set(draft.adrs),
            "summary": render_summary(summary),
            "retrieved": render_retrieved_block(nearest),
        }
        text, record = self._call("adr_validator", StageName.VALIDATE_ADRS, iteration, values)
        verdict = parse_verdict_reply(text)
        return verdict, replace(record, verdict=verdict)

    def generate_baseline(self, context: PackedContext) -> tuple[AdrSetDraft, StageRecord]:
        values = {"repo_context": _context_text(context)}
        text, record = self._call("baseline", StageName.BASELINE, 1, values)
        try:
            draft = parse_adr_set_reply(text, source_config=SourceConfig.BASELINE)
        except ReplyParseError as exc:
            raise AgentOutputError(f"baseline reply unparseable: {exc}", record) from exc
        return draft, record

    def _nearest_existing(self, draft: AdrSetDraft, existing: list[EmbeddedDoc]) -> list[str]:
        """Top existing decision per draft record, deduplicated, order preserved."""
        if not existing:
            return []
        store = VectorStore.from_docs(existing)
        nearest: list[str] = []
        seen: set[str] = set()
        for adr in draft.adrs:
            query = self.embedder.embed(f"{adr.title}\n{adr.context}\n{adr.decision}")
            hits = store.search(query, k=1)
            if hits and hits[0].doc_id not in seen:
                seen.add(hits[0].doc_id)
                nearest.append(hits[0].text)
        return nearest
