"""Prompt template loading and placeholder rendering.

Placeholders use the bit-exact ``{name}`` form, no nesting. Templates are
checked at load time: any placeholder outside the declared vocabulary, or a
required placeholder missing from an agent's template, is a startup error.
"""

from __future__ import annotations

import re
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional

ALLOWED_PLACEHOLDERS = frozenset({"repo_context", "summary", "issues", "adrs", "retrieved"})

REQUIRED_PLACEHOLDERS: dict[str, frozenset[str]] = {
    "summarizer": frozenset({"repo_context", "issues"}),
    "summary_validator": frozenset({"summary", "repo_context"}),
    "adr_generator": frozenset({"summary", "retrieved", "issues"}),
    "adr_validator": frozenset({"adrs", "summary", "retrieved"}),
    "baseline": frozenset({"repo_context"}),
}

AGENT_TEMPLATE_NAMES = tuple(REQUIRED_PLACEHOLDERS)

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")


class TemplateError(Exception):
    pass


def placeholders_in(text: str) -> set[str]:
    return set(_PLACEHOLDER_RE.findall(text))


def check_template(agent_name: str, text: str) -> None:
    found = placeholders_in(text)
    unknown = found - ALLOWED_PLACEHOLDERS
    if unknown:
        raise TemplateError(
            f"template for {agent_name!r} uses unknown placeholder(s): {sorted(unknown)}"
        )
    required = REQUIRED_PLACEHOLDERS.get(agent_name, frozenset())
    missing = required - found
    if missing:
        raise TemplateError(
            f"template for {agent_name!r} is missing required placeholder(s): {sorted(missing)}"
        )


def render_template(text: str, values: Mapping[str, str]) -> str:
    """Single-pass substitution; inserted values are never re-scanned."""

    def _sub(match: re.Match[str]) -> str:
        name = match.group(1)
        if name not in values:
            raise TemplateError(f"no value supplied for placeholder {name!r}")
        return values[name]

    return _PLACEHOLDER_RE.sub(_sub, text)


def load_default_template(agent_name: str) -> str:
    if agent_name not in REQUIRED_PLACEHOLDERS:
        raise TemplateError(f"unknown agent template {agent_name!r}")
    text = resources.files("akm.prompts").joinpath(f"{agent_name}.txt").read_text(encoding="utf-8")
    check_template(agent_name, text)
    return text


def load_template(agent_name: str, override_path: Optional[str] = None) -> str:
    if override_path is None:
        return load_default_template(agent_name)
    text = Path(override_path).read_text(encoding="utf-8")
    check_template(agent_name, text)
    return text
