"""Agent-based architecture decision record generation and evaluation."""

from akm.config import WorkflowConfig
from akm.model import (
    Adr,
    AdrStatus,
    RepoSummary,
    RunStatus,
    SourceConfig,
    StageRecord,
    ValidationVerdict,
    WorkflowRun,
    adr_filename,
    parse_adr,
    render_adr,
)
from akm.orchestrator import replay, run_agentic, run_baseline
from akm.retrieval import EmbeddedDoc, HashingEmbedder, SearchHit, VectorStore

__all__ = [
    "Adr",
    "AdrStatus",
    "EmbeddedDoc",
    "HashingEmbedder",
    "RepoSummary",
    "RunStatus",
    "SearchHit",
    "SourceConfig",
    "StageRecord",
    "ValidationVerdict",
    "VectorStore",
    "WorkflowConfig",
    "WorkflowRun",
    "adr_filename",
    "parse_adr",
    "render_adr",
    "replay",
    "run_agentic",
    "run_baseline",
]

__version__ = "0.1.0"
