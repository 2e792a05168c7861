from __future__ import annotations

import math
import random
from pathlib import Path

import pytest

from akm.extractor import (
    ENTRYPOINT_NAMES,
    MANIFEST_NAMES,
    PackedFile,
    RankWeights,
    RepoFile,
    pack_context,
    rank_files,
    scan_repo,
    wrap_file,
)
from akm.gateway import estimate_tokens


def make_tree(root: Path, files: dict[str, bytes | str]) -> None:
    for rel, content in files.items():
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        if isinstance(content, bytes):
            path.write_bytes(content)
        else:
            path.write_text(content, encoding="utf-8")


class TestScanRepo:
    def test_filters_vcs_vendor_and_hidden(self, tmp_path: Path):
        make_tree(tmp_path, {
            ".git/config": "x",
            "node_modules/x/y.js": "x",
            "vendor/lib.go": "x",
            "target/out.bin": "x",
            "__pycache__/m.pyc": "x",
            ".venv/lib.py": "x",
            ".hidden_file": "x",
            "src/main.rs": "fn main() {}",
        })
        files = scan_repo(tmp_path)
        assert [f.relative_path for f in files] == ["src/main.rs"]

    def test_binary_detection(self, tmp_path: Path):
        make_tree(tmp_path, {"blob.bin": b"abc\x00def", "text.txt": "plain"})
        by_path = {f.relative_path: f for f in scan_repo(tmp_path)}
        assert by_path["blob.bin"].is_binary is True
        assert by_path["text.txt"].is_binary is False

    def test_empty_dir(self, tmp_path: Path):
        assert scan_repo(tmp_path) == []

    def test_size_cap(self, tmp_path: Path):
        make_tree(tmp_path, {"big.txt": "x" * 2048, "small.txt": "y"})
        files = scan_repo(tmp_path, max_file_bytes=1024)
        assert [f.relative_path for f in files] == ["small.txt"]

    def test_nonexistent_root(self, tmp_path: Path):
        with pytest.raises(NotADirectoryError):
            scan_repo(tmp_path / "missing")

    def test_extra_ignores(self, tmp_path: Path):
        make_tree(tmp_path, {"a.log": "x", "a.py": "x"})
        files = scan_repo(tmp_path, extra_ignores=("*.log",))
        assert [f.relative_path for f in files] == ["a.py"]

    def test_sorted_output(self, tmp_path: Path):
        make_tree(tmp_path, {"b.py": "x", "a/z.py": "x", "a/a.py": "x"})
        files = scan_repo(tmp_path)
        paths = [f.relative_path for f in files]
        assert paths == sorted(paths)

    def test_language_tags(self, tmp_path: Path):
        make_tree(tmp_path, {"m.py": "x", "m.weird": "x"})
        by_path = {f.relative_path: f for f in scan_repo(tmp_path)}
        assert by_path["m.py"].language_tag == "python"
        assert by_path["m.weird"].language_tag == "unknown"

    def test_no_path_escapes_root(self, tmp_path: Path):
        make_tree(tmp_path, {"a/b/c.py": "x"})
        for f in scan_repo(tmp_path):
            assert not f.relative_path.startswith("/")
            assert ".." not in f.relative_path.split("/")

    def test_symlinks_skipped(self, tmp_path: Path):
        outside = tmp_path / "outside"
        outside.mkdir()
        (outside / "secret.py").write_text("x", encoding="utf-8")
        repo = tmp_path / "repo"
        repo.mkdir()
        (repo / "real.py").write_text("x", encoding="utf-8")
        (repo / "link.py").symlink_to(outside / "secret.py")
        files = scan_repo(repo)
        assert [f.relative_path for f in files] == ["real.py"]

    def test_hidden_directories_pruned(self, tmp_path: Path):
        make_tree(tmp_path, {".github/workflows/ci.yml": "x", "src/app.py": "x"})
        files = scan_repo(tmp_path)
        assert [f.relative_path for f in files] == ["src/app.py"]


def oracle_score(path: str, language_tag: str, weights: RankWeights) -> float:
    """Independent restatement of the scoring rule for the ranking oracle."""
    name = path.split("/")[-1].lower()
    depth = path.count("/")
    non_source = {"markdown", "json", "yaml", "toml", "xml", "html", "css", "unknown"}
    score = 0.0
    if name in {n.lower() for n in MANIFEST_NAMES}:
        score += weights.manifest
    if name in {n.lower() for n in ENTRYPOINT_NAMES}:
        score += weights.entrypoint
    if name.startswith("readme"):
        score += weights.readme
    if language_tag not in non_source:
        score += weights.source
    score += weights.depth / (1.0 + depth)
    return score


class TestRankFiles:
    def test_readme_beats_plain_source(self):
        readme = RepoFile("README.md", 10, "markdown", False)
        util = RepoFile("lib/util.py", 10, "python", False)
        ranked = rank_files([readme, util])
        assert ranked[0].relative_path == "README.md"

    def test_tie_broken_by_path(self):
        a = RepoFile("a/z.py", 10, "python", False)
        b = RepoFile("a/a.py", 10, "python", False)
        ranked = rank_files([a, b])
        assert [f.relative_path for f in ranked] == ["a/a.py", "a/z.py"]

    def test_fifty_file_fixture_matches_oracle(self):
        rng = random.Random(7)
        extensions = [".py", ".md", ".json", ".rs", ".txt"]
        names = ["main.py", "readme.md", "package.json", "util.py", "data.txt", "lib.rs"]
        files = []
        for i in range(50):
            depth = rng.randint(0, 3)
            dirs = "/".join(f"d{rng.randint(0, 4)}" for _ in range(depth))
            name = rng.choice(names) if rng.random() < 0.5 else f"f{i}{rng.choice(extensions)}"
            rel = f"{dirs}/{name}" if dirs else name
            tag = {"py": "python", "md": "markdown", "json": "json", "rs": "rust", "txt": "unknown"}[
                rel.rsplit(".", 1)[-1]
            ]
            files.append(RepoFile(rel, 10, tag, False))
        weights = RankWeights()
        ranked = rank_files(files, weights)
        expected = sorted(
            files,
            key=lambda f: (-oracle_score(f.relative_path, f.language_tag, weights), f.relative_path),
        )
        assert [f.relative_path for f in ranked] == [f.relative_path for f in expected]
        for f in ranked:
            assert math.isclose(f.rank_score, oracle_score(f.relative_path, f.language_tag, weights))

    def test_custom_weights_respected(self):
        readme = RepoFile("README.md", 10, "markdown", False)
        manifest = RepoFile("package.json", 10, "json", False)
        ranked = rank_files([readme, manifest], RankWeights(manifest=0.0, readme=5.0))
        assert ranked[0].relative_path == "README.md"


class TestPackContext:
    def _repo_with(self, tmp_path: Path, sizes: dict[str, int]) -> list[RepoFile]:
        make_tree(tmp_path, {name: "x" * size for name, size in sizes.items()})
        return [RepoFile(name, size, "unknown", False) for name, size in sizes.items()]

    def test_greedy_skip_and_continue(self, tmp_path: Path):
        files = self._repo_with(tmp_path, {"a.txt": 100, "b.txt": 80, "c.txt": 40})
        costs = {
            f.relative_path: estimate_tokens(wrap_file(f.relative_path, "x" * f.size_bytes))
            for f in files
        }
        budget = costs["a.txt"] + costs["c.txt"]
        packed = pack_context(tmp_path, files, budget)
        assert [p.relative_path for p in packed.included] == ["a.txt", "c.txt"]
        assert packed.excluded_count == 1
        assert packed.total_token_estimate <= budget

    def test_everything_fits(self, tmp_path: Path):
        files = self._repo_with(tmp_path, {"a.txt": 10, "b.txt": 10})
        packed = pack_context(tmp_path, files, 10_000)
        assert packed.excluded_count == 0
        assert len(packed.included) == 2

    def test_single_oversized_file(self, tmp_path: Path):
        files = self._repo_with(tmp_path, {"a.txt": 400})
        packed = pack_context(tmp_path, files, 10)
        assert packed.included == ()
        assert packed.excluded_count == 1

    def test_header_counts_toward_budget(self, tmp_path: Path):
        files = self._repo_with(tmp_path, {"a.txt": 4})
        cost = estimate_tokens(wrap_file("a.txt", "xxxx"))
        assert cost > estimate_tokens("xxxx")
        packed = pack_context(tmp_path, files, cost)
        assert len(packed.included) == 1
        assert packed.included[0].token_estimate == cost

    def test_render_matches_estimate(self, tmp_path: Path):
        files = self._repo_with(tmp_path, {"a.txt": 17, "b.txt": 9})
        packed = pack_context(tmp_path, files, 10_000)
        assert estimate_tokens(packed.render()) <= packed.total_token_estimate + len(packed.included)
        assert "FILE: a.txt" in packed.render()

    def test_deterministic(self, tmp_path: Path):
        files = self._repo_with(tmp_path, {"a.txt": 30, "b.txt": 20})
        one = pack_context(tmp_path, files, 50)
        two = pack_context(tmp_path, files, 50)
        assert one == two

    def test_binary_rejected(self, tmp_path: Path):
        make_tree(tmp_path, {"x.bin": "x"})
        with pytest.raises(ValueError):
            pack_context(tmp_path, [RepoFile("x.bin", 1, "unknown", True)], 100)
