"""Repository walking, file ranking, and token-budgeted context packing."""

from __future__ import annotations

import fnmatch
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from akm.gateway import estimate_tokens

logger = logging.getLogger(__name__)

DEFAULT_MAX_FILE_BYTES = 1 * 1024 * 1024
DEFAULT_BUDGET_TOKENS = 24_000
BINARY_SNIFF_BYTES = 8 * 1024

VCS_DIRS = frozenset({".git", ".hg", ".svn"})
VENDOR_DIRS = frozenset({"node_modules", "vendor", "target", "dist", "build", "__pycache__", ".venv"})

MANIFEST_NAMES = frozenset({
    "package.json", "pyproject.toml", "setup.py", "setup.cfg", "requirements.txt",
    "cargo.toml", "go.mod", "pom.xml", "build.gradle", "build.gradle.kts",
    "gemfile", "composer.json", "cmakelists.txt", "makefile", "dockerfile",
    "docker-compose.yml", "docker-compose.yaml", "pipfile", "mix.exs",
})

ENTRYPOINT_NAMES = frozenset({
    "main.py", "__main__.py", "app.py", "manage.py", "cli.py",
    "index.js", "index.ts", "main.js", "main.ts", "app.js", "server.js",
    "main.go", "main.rs", "lib.rs", "main.c", "main.cpp", "main.java", "program.cs",
})

LANGUAGE_BY_EXTENSION = {
    ".py": "python", ".js": "javascript", ".jsx": "javascript", ".ts": "typescript",
    ".tsx": "typescript", ".rs": "rust", ".go": "go", ".java": "java", ".kt": "kotlin",
    ".rb": "ruby", ".c": "c", ".h": "c", ".cpp": "cpp", ".cc": "cpp", ".hpp": "cpp",
    ".cs": "csharp", ".swift": "swift", ".php": "php", ".scala": "scala", ".sql": "sql",
    ".sh": "shell", ".html": "html", ".css": "css", ".md": "markdown", ".json": "json",
    ".yml": "yaml", ".yaml": "yaml", ".toml": "toml", ".xml": "xml",
}

# Non-code tags: carry information but take no source-file ranking bonus.
_NON_SOURCE_TAGS = frozenset({"markdown", "json", "yaml", "toml", "xml", "html", "css", "unknown"})


@dataclass(frozen=True)
class RankWeights:
    manifest: float = 3.0
    entrypoint: float = 2.0
    readme: float = 2.0
    source: float = 1.0
    depth: float = 1.0

    def to_dict(self) -> dict[str, float]:
        return {
            "manifest": self.manifest,
            "entrypoint": self.entrypoint,
            "readme": self.readme,
            "source": self.source,
            "depth": self.depth,
        }


@dataclass(frozen=True)
class RepoFile:
    relative_path: str
    size_bytes: int
    language_tag: str
    is_binary: bool
    rank_score: float = 0.0


@dataclass(frozen=True)
class PackedFile:
    relative_path: str
    content: str
    token_estimate: int


@dataclass(frozen=True)
class PackedContext:
    included: tuple[PackedFile, ...]
    excluded_count: int
    total_token_estimate: int
    budget: int

    def render(self) -> str:
        return "".join(wrap_file(f.relative_path, f.content) for f in self.included)


def wrap_file(relative_path: str, content: str) -> str:
    """One context block: FILE header plus fenced content. Cost is charged on this."""
    body = content if content.endswith("\n") else content + "\n"
    return f"FILE: {relative_path}\n```\n{body}```\n\n"


def _looks_binary(path: Path) -> bool:
    with open(path, "rb") as fh:
        return b"\x00" in fh.read(BINARY_SNIFF_BYTES)


def _matches_any(relative_path: str, patterns: Iterable[str]) -> bool:
    name = relative_path.rsplit("/", 1)[-1]
    return any(fnmatch.fnmatch(relative_path, p) or fnmatch.fnmatch(name, p) for p in patterns)


def scan_repo(
    root_path: str | Path,
    *,
    max_file_bytes: int = DEFAULT_MAX_FILE_BYTES,
    extra_ignores: tuple[str, ...] = (),
) -> list[RepoFile]:
    """All regular files under ``root_path``, minus VCS/vendor dirs, hidden
    files, and files over the size cap. Output is sorted by relative path,
    so it is independent of traversal order.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise NotADirectoryError(f"not a directory: {root}")

    results: list[RepoFile] = []
    for dirpath, dirnames, filenames in os.walk(root):
        dirnames[:] = sorted(
            d for d in dirnames
            if d not in VCS_DIRS and d not in VENDOR_DIRS and not d.startswith(".")
        )
        for filename in filenames:
            if filename.startswith("."):
                continue
            full = Path(dirpath) / filename
            if full.is_symlink() or not full.is_file():
                continue
            relative = full.relative_to(root).as_posix()
            if _matches_any(relative, extra_ignores):
                continue
            size = full.stat().st_size
            if size > max_file_bytes:
                continue
            results.append(
                RepoFile(
                    relative_path=relative,
                    size_bytes=size,
                    language_tag=LANGUAGE_BY_EXTENSION.get(full.suffix.lower(), "unknown"),
                    is_binary=_looks_binary(full),
                )
            )
    results.sort(key=lambda f: f.relative_path)
    return results


def rank_files(files: list[RepoFile], weights: Optional[RankWeights] = None) -> list[RepoFile]:
    """Score and sort files: manifests, entrypoints, READMEs, then source,
    with a bonus for shallow paths. Ties break on ascending path.
    """
    w = weights or RankWeights()
    ranked = []
    for f in files:
        name = f.relative_path.rsplit("/", 1)[-1].lower()
        depth = f.relative_path.count("/")
        score = (
            w.manifest * (name in MANIFEST_NAMES)
            + w.entrypoint * (name in ENTRYPOINT_NAMES)
            + w.readme * name.startswith("readme")
            + w.source * (f.language_tag not in _NON_SOURCE_TAGS)
            + w.depth * (1.0 / (1.0 + depth))
        )
        ranked.append(
            RepoFile(
                relative_path=f.relative_path,
                size_bytes=f.size_bytes,
                language_tag=f.language_tag,
                is_binary=f.is_binary,
                rank_score=score,
            )
        )
    ranked.sort(key=lambda f: (-f.rank_score, f.relative_path))
    return ranked


def pack_context(root_path: str | Path, ranked: list[RepoFile], budget: int) -> PackedContext:
    """Greedy skip-and-continue packing in rank order.

    A file is included iff its wrapped block (header line and fences count)
    fits the remaining budget; files that do not fit are skipped, not a stop
    condition.
    """
    if budget <= 0:
        raise ValueError("budget must be positive")
    root = Path(root_path)
    included: list[PackedFile] = []
    excluded = 0
    remaining = budget
    for f in ranked:
        if f.is_binary:
            raise ValueError(f"binary file passed to pack_context: {f.relative_path}")
        content = (root / f.relative_path).read_text(encoding="utf-8", errors="replace")
        cost = estimate_tokens(wrap_file(f.relative_path, content))
        if cost <= remaining:
            included.append(PackedFile(f.relative_path, content, cost))
            remaining -= cost
        else:
            excluded += 1
    return PackedContext(
        included=tuple(included),
        excluded_count=excluded,
        total_token_estimate=budget - remaining,
        budget=budget,
    )
