"""Workflow configuration: defaults, JSON loading, and flag overrides.

The config file is a single JSON document mirroring the dataclasses below;
unknown keys are rejected at load time so typos surface immediately.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

from akm.extractor import DEFAULT_BUDGET_TOKENS, DEFAULT_MAX_FILE_BYTES, RankWeights
from akm.gateway import API_KEY_ENV, DEFAULT_RETRY_BUDGET
from akm.retrieval import DEFAULT_K

DEFAULT_MAX_ITERATIONS = 3

AGENT_NAMES = ("summarizer", "summary_validator", "adr_generator", "adr_validator", "baseline")


class ConfigError(Exception):
    pass


def _take(data: dict[str, Any], section: str, allowed: set[str]) -> dict[str, Any]:
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown {section} key(s): {sorted(unknown)}")
    return data


@dataclass(frozen=True)
class LlmSettings:
    provider: str = "scripted"
    model_id: str = "mock-model"
    retry_budget: int = DEFAULT_RETRY_BUDGET
    max_output_tokens: int = 2048
    temperature: float = 0.0
    api_base: str = "https://api.openai.com/v1"
    timeout_s: float = 60.0
    script_path: Optional[str] = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "provider": self.provider,
            "model_id": self.model_id,
            "retry_budget": self.retry_budget,
            "max_output_tokens": self.max_output_tokens,
            "temperature": self.temperature,
            "api_base": self.api_base,
            "timeout_s": self.timeout_s,
            "script_path": self.script_path,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LlmSettings":
        _take(data, "llm", {f for f in cls.__dataclass_fields__})
        settings = cls(**data)
        if settings.provider not in ("scripted", "openai"):
            raise ConfigError(f"llm.provider must be 'scripted' or 'openai', got {settings.provider!r}")
        if settings.retry_budget < 1:
            raise ConfigError("llm.retry_budget must be >= 1")
        return settings


@dataclass(frozen=True)
class ExtractSettings:
    budget_tokens: int = DEFAULT_BUDGET_TOKENS
    max_file_bytes: int = DEFAULT_MAX_FILE_BYTES
    extra_ignores: tuple[str, ...] = ()
    weights: RankWeights = field(default_factory=RankWeights)

    def to_dict(self) -> dict[str, Any]:
        return {
            "budget_tokens": self.budget_tokens,
            "max_file_bytes": self.max_file_bytes,
            "extra_ignores": list(self.extra_ignores),
            "weights": self.weights.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExtractSettings":
        _take(data, "extract", {f for f in cls.__dataclass_fields__})
        kwargs = dict(data)
        if "extra_ignores" in kwargs:
            kwargs["extra_ignores"] = tuple(kwargs["extra_ignores"])
        if "weights" in kwargs:
            weights = kwargs["weights"]
            _take(weights, "extract.weights", {f for f in RankWeights.__dataclass_fields__})
            kwargs["weights"] = RankWeights(**weights)
        settings = cls(**kwargs)
        if settings.budget_tokens < 1:
            raise ConfigError("extract.budget_tokens must be >= 1")
        return settings


@dataclass(frozen=True)
class RetrievalSettings:
    store_path: Optional[str] = None
    embedder: str = "hashing"
    k: int = DEFAULT_K
    index_outputs: bool = False
    model_id: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "store_path": self.store_path,
            "embedder": self.embedder,
            "k": self.k,
            "index_outputs": self.index_outputs,
            "model_id": self.model_id,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RetrievalSettings":
        _take(data, "retrieval", {f for f in cls.__dataclass_fields__})
        settings = cls(**data)
        if settings.embedder not in ("hashing", "openai"):
            raise ConfigError(f"retrieval.embedder must be 'hashing' or 'openai', got {settings.embedder!r}")
        if settings.k < 1:
            raise ConfigError("retrieval.k must be >= 1")
        return settings


@dataclass(frozen=True)
class WorkflowConfig:
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    output_dir: str = "out"
    pipeline: str = "agentic"
    seed: int = 0
    llm: LlmSettings = field(default_factory=LlmSettings)
    extract: ExtractSettings = field(default_factory=ExtractSettings)
    retrieval: RetrievalSettings = field(default_factory=RetrievalSettings)
    agents: dict[str, Optional[str]] = field(default_factory=dict)  # name -> template_path

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.pipeline not in ("agentic", "baseline"):
            raise ConfigError(f"pipeline must be 'agentic' or 'baseline', got {self.pipeline!r}")
        unknown = set(self.agents) - set(AGENT_NAMES)
        if unknown:
            raise ConfigError(f"unknown agent name(s) in config: {sorted(unknown)}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "max_iterations": self.max_iterations,
            "output_dir": self.output_dir,
            "pipeline": self.pipeline,
            "seed": self.seed,
            "llm": self.llm.to_dict(),
            "extract": self.extract.to_dict(),
            "retrieval": self.retrieval.to_dict(),
            "agents": dict(self.agents),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "WorkflowConfig":
        _take(data, "config", {f for f in cls.__dataclass_fields__})
        kwargs = dict(data)
        if "llm" in kwargs:
            kwargs["llm"] = LlmSettings.from_dict(kwargs["llm"])
        if "extract" in kwargs:
            kwargs["extract"] = ExtractSettings.from_dict(kwargs["extract"])
        if "retrieval" in kwargs:
            kwargs["retrieval"] = RetrievalSettings.from_dict(kwargs["retrieval"])
        if "agents" in kwargs:
            agents = {}
            for name, value in kwargs["agents"].items():
                if isinstance(value, dict):
                    _take(value, f"agents.{name}", {"template_path"})
                    agents[name] = value.get("template_path")
                else:
                    agents[name] = value
            kwargs["agents"] = agents
        return cls(**kwargs)

    @classmethod
    def load(cls, path: str | Path) -> "WorkflowConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must contain a JSON object")
        return cls.from_dict(data)

    def with_overrides(self, **kwargs: Any) -> "WorkflowConfig":
        """Apply non-None flag values on top of file/default values."""
        updates = {k: v for k, v in kwargs.items() if v is not None}
        return replace(self, **updates)

    def with_identity(self, pipeline: str, model_id: str) -> "WorkflowConfig":
        """Specialize for one study identity; script paths may template on both."""
        script_path = self.llm.script_path
        if script_path is not None:
            script_path = script_path.replace("{pipeline}", pipeline).replace("{model}", model_id)
        return replace(
            self,
            pipeline=pipeline,
            llm=replace(self.llm, model_id=model_id, script_path=script_path),
        )


def api_key_from_env() -> Optional[str]:
    return os.environ.get(API_KEY_ENV)
