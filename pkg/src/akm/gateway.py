"""Uniform chat-completion interface with retries and a scripted test backend."""

from __future__ import annotations

import logging
import math
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import httpx

logger = logging.getLogger(__name__)

API_KEY_ENV = "AKM_LLM_API_KEY"

DEFAULT_RETRY_BUDGET = 3
BACKOFF_BASE_S = 1.0
BACKOFF_FACTOR = 2.0

# Script failure kinds treated as transient (retried); anything else fails fast.
TRANSIENT_KINDS = frozenset({"transient", "timeout", "rate-limit", "server-error"})


class GatewayError(Exception):
    """Non-transient provider failure, or retry budget exhausted."""


class TransientError(GatewayError):
    """Timeout / rate-limit / 5xx-class failure; eligible for retry."""


class ScriptError(GatewayError):
    """The scripted backend was exhausted or misconfigured (test setup bug)."""


def estimate_tokens(text: str) -> int:
    """ceil(len/4) heuristic. Budgeting only, never billing."""
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class ChatRequest:
    system_prompt: str
    user_prompt: str
    temperature: float = 0.0
    max_output_tokens: int = 2048
    model_id: str = "mock-model"

    def __post_init__(self) -> None:
        if not self.user_prompt:
            raise ValueError("user_prompt must be nonempty")
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError("temperature must be in [0, 1]")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    input_token_estimate: int
    output_token_estimate: int
    latency_ms: int
    attempt_count: int


class Backend(Protocol):
    def send(self, request: ChatRequest) -> str:
        """Return the model reply text, raising TransientError on retryable failures."""
        ...


@dataclass(frozen=True)
class ScriptStep:
    """One scripted outcome: a reply, or a failure of the given kind."""

    reply: Optional[str] = None
    fail: Optional[str] = None

    def __post_init__(self) -> None:
        if (self.reply is None) == (self.fail is None):
            raise ScriptError("a script step must have exactly one of 'reply' or 'fail'")


def script_from_dicts(items: list[dict]) -> list[ScriptStep]:
    steps = []
    for i, item in enumerate(items):
        if not isinstance(item, dict):
            raise ScriptError(f"script entry {i} must be an object")
        steps.append(ScriptStep(reply=item.get("reply"), fail=item.get("fail")))
    return steps


class ScriptedBackend:
    """Replays a fixed sequence of outcomes; strictly in order, exhaustion is an error.

    Consumption is serialized internally, so concurrent use stays safe;
    determinism additionally requires sequential issuance, which the
    orchestrator guarantees.
    """

    def __init__(self, steps: list[ScriptStep]):
        self._steps = list(steps)
        self._cursor = 0
        self._lock = threading.Lock()
        self.requests: list[ChatRequest] = []

    @classmethod
    def from_replies(cls, replies: list[str]) -> "ScriptedBackend":
        return cls([ScriptStep(reply=r) for r in replies])

    @property
    def calls_made(self) -> int:
        return self._cursor

    @property
    def steps_remaining(self) -> int:
        return len(self._steps) - self._cursor

    def send(self, request: ChatRequest) -> str:
        with self._lock:
            if self._cursor >= len(self._steps):
                raise ScriptError(
                    f"script exhausted: call {self._cursor + 1} but only "
                    f"{len(self._steps)} steps scripted"
                )
            step = self._steps[self._cursor]
            self._cursor += 1
            self.requests.append(request)
        if step.fail is not None:
            if step.fail in TRANSIENT_KINDS:
                raise TransientError(f"scripted transient failure: {step.fail}")
            raise GatewayError(f"scripted failure: {step.fail}")
        assert step.reply is not None
        return step.reply


class OpenAiBackend:
    """Chat-completions over an OpenAI-compatible HTTP API.

    Exercised only by manually run integration tests; offline runs use the
    scripted backend.
    """

    def __init__(self, api_key: str, api_base: str = "https://api.openai.com/v1", timeout_s: float = 60.0):
        self._api_key = api_key
        self._api_base = api_base.rstrip("/")
        self._timeout_s = timeout_s

    def send(self, request: ChatRequest) -> str:
        payload = {
            "model": request.model_id,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
        }
        try:
            resp = httpx.post(
                f"{self._api_base}/chat/completions",
                json=payload,
                headers={"Authorization": f"Bearer {self._api_key}"},
                timeout=self._timeout_s,
            )
        except httpx.TimeoutException as exc:
            raise TransientError(f"request timed out: {exc}") from exc
        except httpx.TransportError as exc:
            raise TransientError(f"transport failure: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientError(f"provider returned {resp.status_code}")
        if resp.status_code != 200:
            raise GatewayError(f"provider returned {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise GatewayError(f"malformed provider response: {exc}") from exc


@dataclass
class Gateway:
    """Retrying front door to a chat backend.

    Transient failures back off exponentially (base 1s, factor 2, full
    jitter) up to ``retry_budget`` attempts. ``sleep`` is injectable so
    scripted runs never touch the wall clock.
    """

    backend: Backend
    retry_budget: int = DEFAULT_RETRY_BUDGET
    sleep: Callable[[float], None] = time.sleep
    _rng: random.Random = field(default_factory=random.Random, repr=False)

    def complete(self, request: ChatRequest) -> ChatResponse:
        if self.retry_budget < 1:
            raise ValueError("retry_budget must be >= 1")
        started = time.perf_counter()
        last_error: Optional[TransientError] = None
        for attempt in range(1, self.retry_budget + 1):
            try:
                text = self.backend.send(request)
            except TransientError as exc:
                last_error = exc
                logger.warning("transient failure on attempt %d/%d: %s", attempt, self.retry_budget, exc)
                if attempt < self.retry_budget:
                    delay = self._rng.uniform(0.0, BACKOFF_BASE_S * BACKOFF_FACTOR ** (attempt - 1))
                    self.sleep(delay)
                continue
            if not text:
                raise GatewayError("provider returned an empty reply")
            latency_ms = int((time.perf_counter() - started) * 1000)
            return ChatResponse(
                text=text,
                input_token_estimate=estimate_tokens(request.system_prompt) + estimate_tokens(request.user_prompt),
                output_token_estimate=estimate_tokens(text),
                latency_ms=latency_ms,
                attempt_count=attempt,
            )
        raise GatewayError(
            f"retry budget of {self.retry_budget} exhausted: {last_error}"
        ) from last_error


def no_sleep(_: float) -> None:
    """Sleep stand-in for scripted runs; keeps retries instant and deterministic."""
