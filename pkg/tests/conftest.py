from __future__ import annotations

import random
import string
from pathlib import Path

import pytest

from akm.config import WorkflowConfig
from akm.gateway import ScriptedBackend
from akm.model import Adr, AdrStatus, SourceConfig

SUMMARY_REPLY = """OVERVIEW: A small command line tool with a layered design.
COMPONENTS:
- cli: parses flags and dispatches commands
- core: holds the business rules
TECHNOLOGIES:
- python
DECISION_HINTS:
- layered module structure
"""

ACCEPT_REPLY = "VERDICT: ACCEPT"


def reject_reply(*issues: str) -> str:
    return "\n".join(["VERDICT: REJECT"] + [f"ISSUE: {i}" for i in issues])


def adr_block(title: str, context: str = "The tool needs a clear module split.",
              decision: str = "Keep the layers in separate modules.",
              consequences: str = "Each layer is testable in isolation.") -> str:
    return (
        f"=== ADR ===\n# {title}\n\n## Context\n{context}\n\n"
        f"## Decision\n{decision}\n\n## Consequences\n{consequences}\n"
    )


GENERATOR_REPLY = adr_block("Use a layered architecture")
GENERATOR_REPLY_TWO = adr_block("Use a layered architecture") + adr_block(
    "Store settings in one JSON file",
    context="Several modules need shared settings.",
    decision="Read a single JSON document at startup.",
    consequences="One place to look, but a restart is needed on change.",
)


@pytest.fixture
def sample_repo(tmp_path: Path) -> Path:
    repo = tmp_path / "repo"
    (repo / "src").mkdir(parents=True)
    (repo / "README.md").write_text("# demo project\n", encoding="utf-8")
    (repo / "main.py").write_text("from src.core import run\n\nrun()\n", encoding="utf-8")
    (repo / "src" / "core.py").write_text("def run():\n    return 42\n", encoding="utf-8")
    (repo / "pyproject.toml").write_text("[project]\nname = 'demo'\n", encoding="utf-8")
    return repo


@pytest.fixture
def happy_backend() -> ScriptedBackend:
    return ScriptedBackend.from_replies([SUMMARY_REPLY, ACCEPT_REPLY, GENERATOR_REPLY, ACCEPT_REPLY])


def make_config(out_dir: Path, **kwargs) -> WorkflowConfig:
    return WorkflowConfig(output_dir=str(out_dir), **kwargs)


_TITLE_CHARS = string.ascii_letters + string.digits + " .,!?'-/()"
_BODY_CHARS = _TITLE_CHARS + "\n\t:;\"*`_#èñ中"


def random_valid_adr(rng: random.Random, adr_id: int = 1) -> Adr:
    """A generator for the round-trip property: any valid record must survive."""

    def title() -> str:
        while True:
            text = "".join(rng.choice(_TITLE_CHARS) for _ in range(rng.randint(1, 60))).strip()
            if text:
                return text

    def body() -> str:
        while True:
            text = "".join(rng.choice(_BODY_CHARS) for _ in range(rng.randint(1, 200))).strip()
            if text and not any(line.startswith("## ") for line in text.splitlines()):
                return text

    return Adr(
        id=adr_id,
        title=title(),
        status=rng.choice(list(AdrStatus)),
        context=body(),
        decision=body(),
        consequences=body(),
        source_config=rng.choice(list(SourceConfig)),
        provenance=tuple(f"stage:{i}" for i in range(rng.randint(0, 2))),
    )
