"""Embedding plus an exact-search in-memory vector store with JSONL persistence."""

from __future__ import annotations

import json
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Protocol

import numpy as np

DEFAULT_DIM = 256
DEFAULT_K = 3

_TOKEN_RE = re.compile(r"[a-z0-9]+")

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_U64 = 1 << 64


class StoreError(Exception):
    pass


class StoreLoadError(StoreError):
    """A persisted store file is malformed. ``line`` is 1-based."""

    def __init__(self, message: str, line: int) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


def fnv1a_64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) % _U64
    return h


class Embedder(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


class HashingEmbedder:
    """Deterministic offline embedder.

    Tokens are maximal lowercase alphanumeric runs; each token lands in one
    of ``dimension`` buckets via 64-bit FNV-1a, signed by hash bit 63, and
    the accumulated vector is L2-normalized (empty text stays the zero
    vector).
    """

    def __init__(self, dimension: int = DEFAULT_DIM):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.dimension = dimension

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        for token in _TOKEN_RE.findall(text.lower()):
            h = fnv1a_64(token.encode("utf-8"))
            sign = 1.0 if (h >> 63) & 1 == 0 else -1.0
            vec[h % self.dimension] += sign
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec /= norm
        return vec


class HttpEmbedder:
    """Embeddings over an OpenAI-compatible HTTP API; integration use only."""

    def __init__(self, api_key: str, model_id: str, api_base: str = "https://api.openai.com/v1",
                 dimension: int = 1536, timeout_s: float = 60.0):
        import httpx  # local import keeps offline paths dependency-quiet

        self._httpx = httpx
        self._api_key = api_key
        self._model_id = model_id
        self._api_base = api_base.rstrip("/")
        self._timeout_s = timeout_s
        self.dimension = dimension

    def embed(self, text: str) -> np.ndarray:
        resp = self._httpx.post(
            f"{self._api_base}/embeddings",
            json={"model": self._model_id, "input": text},
            headers={"Authorization": f"Bearer {self._api_key}"},
            timeout=self._timeout_s,
        )
        resp.raise_for_status()
        vec = np.asarray(resp.json()["data"][0]["embedding"], dtype=np.float64)
        self.dimension = vec.shape[0]
        return vec


@dataclass(frozen=True)
class EmbeddedDoc:
    doc_id: str
    text: str
    vector: tuple[float, ...]
    metadata: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise ValueError("doc_id must be nonempty")
        if len(self.vector) < 1:
            raise ValueError("vector must have dimension >= 1")
        if not all(np.isfinite(v) for v in self.vector):
            raise ValueError("vector must contain only finite values")

    @classmethod
    def from_vector(cls, doc_id: str, text: str, vector: np.ndarray | Iterable[float],
                    metadata: Optional[dict[str, str]] = None) -> "EmbeddedDoc":
        return cls(doc_id=doc_id, text=text, vector=tuple(float(v) for v in vector),
                   metadata=dict(metadata or {}))


@dataclass(frozen=True)
class SearchHit:
    doc_id: str
    score: float
    text: str


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine in [-1, 1]; the zero vector scores 0 against everything."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(float(np.dot(a, b)) / (na * nb), -1.0, 1.0))


class VectorStore:
    """Exact top-k cosine store keyed by doc_id (re-adding replaces).

    Reads may run concurrently; writes take the internal lock, and the
    orchestrator only writes between stages.
    """

    def __init__(self) -> None:
        self._docs: dict[str, EmbeddedDoc] = {}
        self._dimension: Optional[int] = None
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self._docs)

    @property
    def dimension(self) -> Optional[int]:
        return self._dimension

    def docs(self) -> list[EmbeddedDoc]:
        return sorted(self._docs.values(), key=lambda d: d.doc_id)

    def get(self, doc_id: str) -> Optional[EmbeddedDoc]:
        return self._docs.get(doc_id)

    def add(self, doc: EmbeddedDoc) -> None:
        with self._lock:
            if self._dimension is None:
                self._dimension = len(doc.vector)
            elif len(doc.vector) != self._dimension:
                raise StoreError(
                    f"dimension mismatch: store is {self._dimension}-d, doc is {len(doc.vector)}-d"
                )
            self._docs[doc.doc_id] = doc

    def search(self, query_vector: np.ndarray | Iterable[float], k: int) -> list[SearchHit]:
        """Exact top-k by cosine similarity, ties broken by ascending doc_id."""
        if k < 1:
            raise ValueError("k must be positive")
        query = np.asarray(list(query_vector) if not isinstance(query_vector, np.ndarray) else query_vector,
                           dtype=np.float64)
        docs = self.docs()
        if not docs:
            return []
        if self._dimension is not None and query.shape[0] != self._dimension:
            raise StoreError(
                f"dimension mismatch: store is {self._dimension}-d, query is {query.shape[0]}-d"
            )
        matrix = np.array([d.vector for d in docs], dtype=np.float64)
        doc_norms = np.linalg.norm(matrix, axis=1)
        q_norm = float(np.linalg.norm(query))
        if q_norm == 0.0:
            scores = np.zeros(len(docs))
        else:
            denom = doc_norms * q_norm
            scores = np.divide(matrix @ query, denom, out=np.zeros(len(docs)), where=denom > 0.0)
            scores = np.clip(scores, -1.0, 1.0)
        order = sorted(range(len(docs)), key=lambda i: (-scores[i], docs[i].doc_id))[:k]
        return [SearchHit(doc_id=docs[i].doc_id, score=float(scores[i]), text=docs[i].text) for i in order]

    def save(self, path: str | Path) -> None:
        """One JSON object per line; empty store writes a zero-length file."""
        with self._lock:
            docs = sorted(self._docs.values(), key=lambda d: d.doc_id)
            lines = [
                json.dumps(
                    {"doc_id": d.doc_id, "vector": list(d.vector), "text": d.text, "metadata": d.metadata},
                    ensure_ascii=False,
                    sort_keys=True,
                )
                for d in docs
            ]
            Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path: str | Path) -> "VectorStore":
        store = cls()
        raw = Path(path).read_text(encoding="utf-8")
        if not raw:
            return store
        for line_no, line in enumerate(raw.splitlines(), start=1):
            try:
                record = json.loads(line)
                doc = EmbeddedDoc(
                    doc_id=record["doc_id"],
                    text=record["text"],
                    vector=tuple(float(v) for v in record["vector"]),
                    metadata=dict(record.get("metadata", {})),
                )
            except (ValueError, KeyError, TypeError) as exc:
                raise StoreLoadError(f"malformed record: {exc}", line_no) from exc
            store.add(doc)
        if not raw.endswith("\n"):
            raise StoreLoadError("truncated record (missing trailing newline)", raw.count("\n") + 1)
        return store

    @classmethod
    def from_docs(cls, docs: Iterable[EmbeddedDoc]) -> "VectorStore":
        store = cls()
        for doc in docs:
            store.add(doc)
        return store


def build_embedder(kind: str, *, api_key: Optional[str] = None, model_id: str = "",
                   api_base: str = "https://api.openai.com/v1") -> Embedder:
    if kind == "hashing":
        return HashingEmbedder()
    if kind == "openai":
        if not api_key:
            raise StoreError("live embedder requires an API key")
        return HttpEmbedder(api_key=api_key, model_id=model_id, api_base=api_base)
    raise StoreError(f"unknown embedder {kind!r}")
