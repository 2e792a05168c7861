"""Domain types for architecture decision records and workflow runs.

The ADR markdown format produced by :func:`render_adr` is the on-disk
contract for every pipeline: ``parse_adr`` is its exact inverse, so any
file this package emits can be re-read without loss.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Optional


class AdrStatus(str, Enum):
    PROPOSED = "proposed"
    ACCEPTED = "accepted"
    UNVALIDATED = "unvalidated"


class SourceConfig(str, Enum):
    AGENTIC = "agentic"
    BASELINE = "baseline"


class RunStatus(str, Enum):
    COMPLETED = "completed"
    COMPLETED_WITH_WARNINGS = "completed-with-warnings"
    FAILED = "failed"


MAX_TITLE_LEN = 200
SLUG_MAX_LEN = 60

_TITLE_LINE_RE = re.compile(r"^# (\d{4,})\. (.+)$")
_STATUS_LINE_RE = re.compile(r"^Status: (.+)$")
_SECTION_HEADINGS = ("## Context", "## Decision", "## Consequences")


class AdrValidationError(ValueError):
    """A field of an ADR violates its schema. ``field`` names the offender."""

    def __init__(self, field_name: str, message: str) -> None:
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class AdrParseError(ValueError):
    """A document does not conform to the ADR grammar. ``line`` is 1-based."""

    def __init__(self, message: str, line: int) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Adr:
    """One architecture decision record.

    ``source_config`` and ``provenance`` are run metadata: they are kept out
    of equality comparisons because the rendered markdown document does not
    carry them (and must not, so that blinded study bundles stay blind).
    """

    id: int
    title: str
    status: AdrStatus
    context: str
    decision: str
    consequences: str
    source_config: SourceConfig = field(default=SourceConfig.AGENTIC, compare=False)
    provenance: tuple[str, ...] = field(default=(), compare=False)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "title": self.title,
            "status": self.status.value,
            "context": self.context,
            "decision": self.decision,
            "consequences": self.consequences,
            "source_config": self.source_config.value,
            "provenance": list(self.provenance),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Adr":
        return cls(
            id=data["id"],
            title=data["title"],
            status=AdrStatus(data["status"]),
            context=data["context"],
            decision=data["decision"],
            consequences=data["consequences"],
            source_config=SourceConfig(data.get("source_config", "agentic")),
            provenance=tuple(data.get("provenance", ())),
        )


def _check_body(field_name: str, text: str) -> None:
    if not isinstance(text, str) or not text.strip():
        raise AdrValidationError(field_name, "must be nonempty text")
    if text != text.strip():
        raise AdrValidationError(field_name, "must not have leading or trailing whitespace")
    for line in text.splitlines():
        if line.startswith("## "):
            raise AdrValidationError(
                field_name, "must not contain lines starting with '## ' (reserved for headings)"
            )


def validate_adr(adr: Adr) -> None:
    """Raise :class:`AdrValidationError` on the first invariant violation."""
    if not isinstance(adr.id, int) or isinstance(adr.id, bool) or adr.id < 1:
        raise AdrValidationError("id", "must be an integer >= 1")
    title = adr.title
    if not isinstance(title, str) or not title:
        raise AdrValidationError("title", "must be nonempty")
    if "\n" in title or "\r" in title:
        raise AdrValidationError("title", "must not contain line breaks")
    if title != title.strip():
        raise AdrValidationError("title", "must not have leading or trailing whitespace")
    if len(title) > MAX_TITLE_LEN:
        raise AdrValidationError("title", f"must be at most {MAX_TITLE_LEN} characters")
    if not isinstance(adr.status, AdrStatus):
        raise AdrValidationError("status", "must be a valid status")
    _check_body("context", adr.context)
    _check_body("decision", adr.decision)
    _check_body("consequences", adr.consequences)
    if not isinstance(adr.source_config, SourceConfig):
        raise AdrValidationError("source_config", "must be a valid source config")


def validate_adr_set(adrs: list[Adr]) -> None:
    """ids must be consecutive starting at 1; every record must be valid."""
    for i, adr in enumerate(adrs, start=1):
        validate_adr(adr)
        if adr.id != i:
            raise AdrValidationError("id", f"ids must be consecutive from 1; position {i} has id {adr.id}")


def render_adr(adr: Adr) -> str:
    """Render an ADR to its canonical markdown document.

    Layout: the title line, the status line, and each section (heading
    directly above its body) are blocks separated by exactly one blank
    line; the document ends with a single newline.
    """
    validate_adr(adr)
    blocks = [
        f"# {adr.id:04d}. {adr.title}",
        f"Status: {adr.status.value}",
        f"## Context\n{adr.context}",
        f"## Decision\n{adr.decision}",
        f"## Consequences\n{adr.consequences}",
    ]
    return "\n\n".join(blocks) + "\n"


def _split_sections(lines: list[str], start: int, first_line_no: int) -> dict[str, str]:
    """Collect the three section bodies from ``lines[start:]``.

    ``first_line_no`` is the 1-based document line number of ``lines[0]``.
    """
    heading_at: dict[str, int] = {}
    order: list[tuple[int, str]] = []
    for idx in range(start, len(lines)):
        line = lines[idx]
        if line.startswith("## "):
            if line not in _SECTION_HEADINGS:
                raise AdrParseError(f"unknown heading {line!r}", first_line_no + idx)
            if line in heading_at:
                raise AdrParseError(f"duplicate heading {line!r}", first_line_no + idx)
            heading_at[line] = idx
            order.append((idx, line))
    for expected in _SECTION_HEADINGS:
        if expected not in heading_at:
            raise AdrParseError(f"missing section {expected!r}", first_line_no + len(lines) - 1)
    if [h for _, h in order] != list(_SECTION_HEADINGS):
        raise AdrParseError("sections out of order", first_line_no + order[0][0])

    bodies: dict[str, str] = {}
    for n, (idx, heading) in enumerate(order):
        end = order[n + 1][0] if n + 1 < len(order) else len(lines)
        body_lines = lines[idx + 1 : end]
        # Drop the single structural blank line that precedes the next heading.
        if n + 1 < len(order):
            if not body_lines or body_lines[-1] != "":
                raise AdrParseError(
                    f"expected blank line before {order[n + 1][1]!r}", first_line_no + end - 1
                )
            body_lines = body_lines[:-1]
        body = "\n".join(body_lines)
        if not body.strip():
            raise AdrParseError(f"empty body for {heading!r}", first_line_no + idx)
        bodies[heading] = body
    return bodies


def parse_adr(document: str) -> Adr:
    """Parse a document produced by :func:`render_adr` back into an ``Adr``.

    Exact inverse of rendering on the rendered subset. Run metadata
    (``source_config``, ``provenance``) is not part of the document and
    takes default values.
    """
    if not document.endswith("\n"):
        raise AdrParseError("document must end with a newline", max(1, document.count("\n") + 1))
    lines = document[:-1].split("\n")
    if not lines or not lines[0]:
        raise AdrParseError("empty document", 1)

    m = _TITLE_LINE_RE.match(lines[0])
    if m is None:
        raise AdrParseError("malformed id line; expected '# NNNN. Title'", 1)
    adr_id = int(m.group(1))
    title = m.group(2)

    if len(lines) < 2 or lines[1] != "":
        raise AdrParseError("expected blank line after title", 2)
    if len(lines) < 3:
        raise AdrParseError("missing status line", 3)
    sm = _STATUS_LINE_RE.match(lines[2])
    if sm is None:
        raise AdrParseError("malformed status line; expected 'Status: <status>'", 3)
    try:
        status = AdrStatus(sm.group(1))
    except ValueError:
        raise AdrParseError(f"unknown status {sm.group(1)!r}", 3) from None
    if len(lines) < 4 or lines[3] != "":
        raise AdrParseError("expected blank line after status", 4)

    bodies = _split_sections(lines, 4, 1)
    adr = Adr(
        id=adr_id,
        title=title,
        status=status,
        context=bodies["## Context"],
        decision=bodies["## Decision"],
        consequences=bodies["## Consequences"],
    )
    try:
        validate_adr(adr)
    except AdrValidationError as exc:
        raise AdrParseError(str(exc), 1) from exc
    return adr


def adr_filename(adr: Adr) -> str:
    """``NNNN-slug.md``: id zero-padded to 4, slugified title capped at 60 chars."""
    validate_adr(adr)
    slug = re.sub(r"[^a-z0-9]+", "-", adr.title.lower()).strip("-")[:SLUG_MAX_LEN]
    return f"{adr.id:04d}-{slug}.md"


def stamp_adrs(
    adrs: list[Adr],
    *,
    status: Optional[AdrStatus] = None,
    source_config: Optional[SourceConfig] = None,
    provenance: Optional[tuple[str, ...]] = None,
) -> list[Adr]:
    """Return copies of ``adrs`` with workflow-assigned metadata applied."""
    updates: dict[str, Any] = {}
    if status is not None:
        updates["status"] = status
    if source_config is not None:
        updates["source_config"] = source_config
    if provenance is not None:
        updates["provenance"] = provenance
    return [replace(a, **updates) for a in adrs]


@dataclass(frozen=True)
class Component:
    name: str
    responsibility: str

    def to_dict(self) -> dict[str, str]:
        return {"name": self.name, "responsibility": self.responsibility}


@dataclass(frozen=True)
class RepoSummary:
    """Validated high-level architecture summary of a repository."""

    overview: str
    components: tuple[Component, ...] = ()
    technologies: tuple[str, ...] = ()
    decision_hints: tuple[str, ...] = ()
    revision: int = 1

    def __post_init__(self) -> None:
        if not self.overview.strip():
            raise ValueError("overview must be nonempty")
        if any(not c.name.strip() for c in self.components):
            raise ValueError("components must not contain entries with an empty name")
        if self.revision < 1:
            raise ValueError("revision must be >= 1")

    def to_dict(self) -> dict[str, Any]:
        return {
            "overview": self.overview,
            "components": [c.to_dict() for c in self.components],
            "technologies": list(self.technologies),
            "decision_hints": list(self.decision_hints),
            "revision": self.revision,
        }


@dataclass(frozen=True)
class ValidationVerdict:
    """Accept/reject decision from a validator agent.

    ``issues`` is empty exactly when ``accepted`` is true; the verdict
    parser inserts a placeholder issue for bare rejections.
    """

    accepted: bool
    issues: tuple[str, ...]
    raw_response: str

    def __post_init__(self) -> None:
        if not self.accepted and not self.issues:
            raise ValueError("a rejection must carry at least one issue")
        if self.accepted and self.issues:
            raise ValueError("an acceptance must carry no issues")

    def to_dict(self) -> dict[str, Any]:
        return {
            "accepted": self.accepted,
            "issues": list(self.issues),
            "raw_response": self.raw_response,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ValidationVerdict":
        return cls(
            accepted=data["accepted"],
            issues=tuple(data["issues"]),
            raw_response=data["raw_response"],
        )


class StageName(str, Enum):
    SUMMARIZE = "summarize"
    VALIDATE_SUMMARY = "validate-summary"
    GENERATE_ADRS = "generate-adrs"
    VALIDATE_ADRS = "validate-adrs"
    BASELINE = "baseline"


@dataclass(frozen=True)
class StageRecord:
    """Audit-trail entry for one agent exchange."""

    stage_name: StageName
    iteration: int
    agent_name: str
    prompt: str
    response: str
    verdict: Optional[ValidationVerdict] = None
    token_estimate: int = 0

    def __post_init__(self) -> None:
        if self.iteration < 1:
            raise ValueError("iteration must be >= 1")
        if not self.prompt or not self.response:
            raise ValueError("prompt and response must be nonempty")

    @property
    def exchange_id(self) -> str:
        return f"{self.stage_name.value}:{self.iteration}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "stage_name": self.stage_name.value,
            "iteration": self.iteration,
            "agent_name": self.agent_name,
            "prompt": self.prompt,
            "response": self.response,
            "verdict": self.verdict.to_dict() if self.verdict is not None else None,
            "token_estimate": self.token_estimate,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "StageRecord":
        verdict = data.get("verdict")
        return cls(
            stage_name=StageName(data["stage_name"]),
            iteration=data["iteration"],
            agent_name=data["agent_name"],
            prompt=data["prompt"],
            response=data["response"],
            verdict=ValidationVerdict.from_dict(verdict) if verdict is not None else None,
            token_estimate=data["token_estimate"],
        )


@dataclass
class WorkflowRun:
    """Complete record of one orchestrated run."""

    run_id: str
    repo_path: str
    config_snapshot: dict[str, Any]
    stages: list[StageRecord]
    final_adrs: list[Adr]
    status: RunStatus
    started_at: str
    ended_at: str
    warnings: list[str] = field(default_factory=list)
    error: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "run_id": self.run_id,
            "repo_path": self.repo_path,
            "config_snapshot": self.config_snapshot,
            "stages": [s.to_dict() for s in self.stages],
            "final_adrs": [a.to_dict() for a in self.final_adrs],
            "status": self.status.value,
            "started_at": self.started_at,
            "ended_at": self.ended_at,
            "warnings": list(self.warnings),
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "WorkflowRun":
        return cls(
            run_id=data["run_id"],
            repo_path=data["repo_path"],
            config_snapshot=data["config_snapshot"],
            stages=[StageRecord.from_dict(s) for s in data["stages"]],
            final_adrs=[Adr.from_dict(a) for a in data["final_adrs"]],
            status=RunStatus(data["status"]),
            started_at=data["started_at"],
            ended_at=data["ended_at"],
            warnings=list(data.get("warnings", [])),
            error=data.get("error"),
        )
