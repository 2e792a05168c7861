"""Blind comparative study mechanics: bundle building, rating ingestion,
and per-identity aggregate reports."""

from __future__ import annotations

import csv
import json
import logging
import random
import re
import shutil
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path
from typing import Mapping

from akm.config import WorkflowConfig
from akm.orchestrator import ADR_DIR, run_workflow

logger = logging.getLogger(__name__)

LABELS = ("config 1", "config 2", "config 3", "config 4")
CRITERIA = ("relevance", "coherence", "completeness", "conciseness", "overall")
RATINGS_HEADER = "repo_id,label,relevance,coherence,completeness,conciseness,overall"

KEY_JSON = "key.json"
MANIFEST_JSON = "manifest.json"
BUNDLE_DIR = "bundle"
RUNS_DIR = "runs"


class StudyError(Exception):
    pass


@dataclass(frozen=True)
class Identity:
    pipeline: str
    model_id: str

    def to_dict(self) -> dict[str, str]:
        return {"pipeline": self.pipeline, "model_id": self.model_id}

    @classmethod
    def from_dict(cls, data: Mapping[str, str]) -> "Identity":
        return cls(pipeline=data["pipeline"], model_id=data["model_id"])


@dataclass(frozen=True)
class RatingRecord:
    repo_id: str
    label: str
    relevance: int
    coherence: int
    completeness: int
    conciseness: int
    overall: int

    def __post_init__(self) -> None:
        for criterion in CRITERIA:
            value = getattr(self, criterion)
            if not isinstance(value, int) or isinstance(value, bool) or not 1 <= value <= 5:
                raise StudyError(f"{criterion} must be an integer in [1, 5], got {value!r}")


def assign_labels(identities: list[Identity], seed: int) -> dict[str, Identity]:
    """Seeded pseudorandom permutation of the four blinded labels."""
    if len(identities) != 4:
        raise StudyError(f"exactly 4 identities required, got {len(identities)}")
    if len(set(identities)) != 4:
        raise StudyError("identities must be distinct")
    labels = list(LABELS)
    random.Random(seed).shuffle(labels)
    return {labels[i]: identity for i, identity in enumerate(identities)}


def _identity_dirname(identity: Identity) -> str:
    slug = re.sub(r"[^a-zA-Z0-9._-]+", "-", identity.model_id)
    return f"{identity.pipeline}__{slug}"


def build_study_bundle(
    repo_path: str | Path,
    configs: list[WorkflowConfig],
    seed: int,
    out_dir: str | Path,
) -> Path:
    """Run all four configurations and lay out the blinded bundle.

    Participant-facing files live under ``bundle/<label>/``; the label-to-
    identity mapping goes to ``key.json`` next to (not inside) the bundle.
    """
    if len(configs) != 4:
        raise StudyError(f"exactly 4 run configs required, got {len(configs)}")
    identities = [Identity(c.pipeline, c.llm.model_id) for c in configs]
    mapping = assign_labels(identities, seed)

    out = Path(out_dir)
    bundle = out / BUNDLE_DIR
    bundle.mkdir(parents=True, exist_ok=True)

    label_of = {identity: label for label, identity in mapping.items()}
    failures: list[dict[str, str]] = []
    for config, identity in zip(configs, identities):
        run_out = out / RUNS_DIR / _identity_dirname(identity)
        run = run_workflow(repo_path, replace(config, output_dir=str(run_out)))
        if run.status.value == "failed":
            failures.append({**identity.to_dict(), "error": run.error or "run failed"})
            logger.warning("study run failed for %s/%s: %s", identity.pipeline, identity.model_id, run.error)
        label_dir = bundle / label_of[identity]
        label_dir.mkdir(parents=True, exist_ok=True)
        for adr_file in sorted((run_out / ADR_DIR).glob("*.md")):
            shutil.copyfile(adr_file, label_dir / adr_file.name)

    (out / KEY_JSON).write_text(
        json.dumps({label: mapping[label].to_dict() for label in sorted(mapping)},
                   indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
        newline="\n",
    )
    (out / MANIFEST_JSON).write_text(
        json.dumps({"complete": not failures, "failures": failures}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
        newline="\n",
    )
    return out


def blinding_violations(bundle_dir: str | Path, banned: list[str]) -> list[tuple[str, str]]:
    """(file, banned string) pairs found anywhere in the participant bundle."""
    violations = []
    for path in sorted(Path(bundle_dir).rglob("*")):
        if not path.is_file():
            continue
        haystack = str(path.relative_to(bundle_dir)) + "\n" + path.read_text(encoding="utf-8", errors="replace")
        for needle in banned:
            if needle and needle in haystack:
                violations.append((str(path), needle))
    return violations


def load_key(path: str | Path) -> dict[str, Identity]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    key = {}
    for label, identity in data.items():
        if label not in LABELS:
            raise StudyError(f"unexpected label {label!r} in key file {path}")
        key[label] = Identity.from_dict(identity)
    return key


def load_keys_dir(keys_dir: str | Path) -> dict[str, dict[str, Identity]]:
    """One ``<repo_id>.json`` key file per repository."""
    keys = {}
    for path in sorted(Path(keys_dir).glob("*.json")):
        keys[path.stem] = load_key(path)
    if not keys:
        raise StudyError(f"no key files (*.json) found in {keys_dir}")
    return keys


def load_ratings_csv(path: str | Path) -> list[RatingRecord]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise StudyError("ratings file is empty") from None
        if ",".join(header) != RATINGS_HEADER:
            raise StudyError(f"ratings header must be exactly {RATINGS_HEADER!r}")
        records = []
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 7:
                raise StudyError(f"row {row_no}: expected 7 fields, got {len(row)}")
            try:
                scores = [int(v) for v in row[2:]]
            except ValueError as exc:
                raise StudyError(f"row {row_no}: ratings must be integers: {exc}") from exc
            try:
                records.append(RatingRecord(row[0], row[1], *scores))
            except StudyError as exc:
                raise StudyError(f"row {row_no}: {exc}") from exc
    return records


@dataclass(frozen=True)
class ReportRow:
    pipeline: str
    model_id: str
    rating_count: int
    means: dict[str, float]           # full precision
    display: dict[str, str]           # half-up, 1 decimal

    def to_dict(self) -> dict:
        return {
            "pipeline": self.pipeline,
            "model_id": self.model_id,
            "rating_count": self.rating_count,
            "means": self.means,
            "display": self.display,
        }


@dataclass(frozen=True)
class Report:
    rows: tuple[ReportRow, ...]

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in self.rows]}


def round_half_up_1dp(value: Fraction) -> str:
    """Exact half-up rounding of a rational to one decimal place."""
    tenths = (value * 10 + Fraction(1, 2)).__floor__()
    return f"{tenths // 10}.{tenths % 10}"


def aggregate(ratings: list[RatingRecord], keys: Mapping[str, Mapping[str, Identity]]) -> Report:
    """Per-identity arithmetic means over all resolvable ratings.

    Means are exact rationals internally (ratings are integers); the display
    strings apply half-up rounding to one decimal, matching the report's
    presentation precision.
    """
    sums: dict[Identity, dict[str, int]] = {}
    counts: dict[Identity, int] = {}
    for rating in ratings:
        repo_key = keys.get(rating.repo_id)
        if repo_key is None:
            raise StudyError(f"no key file for repo {rating.repo_id!r}")
        identity = repo_key.get(rating.label)
        if identity is None:
            raise StudyError(f"label {rating.label!r} not present in key for repo {rating.repo_id!r}")
        bucket = sums.setdefault(identity, {c: 0 for c in CRITERIA})
        for criterion in CRITERIA:
            bucket[criterion] += getattr(rating, criterion)
        counts[identity] = counts.get(identity, 0) + 1

    rows = []
    for identity in sorted(sums, key=lambda i: (i.pipeline, i.model_id)):
        n = counts[identity]
        exact = {c: Fraction(sums[identity][c], n) for c in CRITERIA}
        rows.append(
            ReportRow(
                pipeline=identity.pipeline,
                model_id=identity.model_id,
                rating_count=n,
                means={c: float(exact[c]) for c in CRITERIA},
                display={c: round_half_up_1dp(exact[c]) for c in CRITERIA},
            )
        )
    return Report(rows=tuple(rows))


def render_report_table(report: Report) -> str:
    headers = ["Source", "Model", "Relevance", "Coherence", "Completeness", "Conciseness", "Overall"]
    rows = [
        [r.pipeline, r.model_id] + [r.display[c] for c in CRITERIA]
        for r in report.rows
    ]
    widths = [max(len(headers[i]), *(len(row[i]) for row in rows)) if rows else len(headers[i])
              for i in range(len(headers))]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip(),
        "  ".join("-" * widths[i] for i in range(len(headers))).rstrip(),
    ]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
    return "\n".join(lines) + "\n"


def write_report(report: Report, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "report.json"
    txt_path = out / "report.txt"
    json_path.write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
        newline="\n",
    )
    txt_path.write_text(render_report_table(report), encoding="utf-8", newline="\n")
    return json_path, txt_path
