"""Uniform access to chat-completion and embedding backends.

Two backend kinds: an OpenAI-compatible remote endpoint (bearer auth, retries,
rate limiting) and a deterministic scripted mock for desk-scale runs. All
traffic is metered into a thread-safe usage ledger, broken down by the role
each request plays in the optimization loop.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import requests

from .errors import (
    BackendUnavailable,
    BatchRequestError,
    BudgetExceeded,
    RequestRejected,
    ScriptExhausted,
)

ROLE_TAGS = (
    "sample_gen",
    "predictor",
    "annotator",
    "analyzer",
    "prompt_gen",
    "modifier",
    "ranker",
)

# Diversity where generation is wanted, determinism where judging is wanted.
ROLE_TEMPERATURE_DEFAULTS = {
    "sample_gen": 1.0,
    "prompt_gen": 0.8,
    "analyzer": 0.3,
    "modifier": 0.3,
    "predictor": 0.0,
    "annotator": 0.0,
    "ranker": 0.0,
}

EMBEDDING_DIM = 512


# --- wire types --------------------------------------------------------------

@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    content: str


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    model_id: str
    role_tag: str
    temperature: float = 0.0
    max_tokens: int = 1024
    seed: int | None = None

    def joined_content(self) -> str:
        return "\n".join(m.content for m in self.messages)


def make_request(
    role_tag: str,
    messages: list[ChatMessage],
    model_id: str,
    temperature: float | None = None,
    max_tokens: int = 1024,
    seed: int | None = None,
) -> ChatRequest:
    """Build a request, filling the per-role temperature default when unset."""
    if role_tag not in ROLE_TAGS:
        raise ValueError(f"unknown role_tag {role_tag!r}")
    if temperature is None:
        temperature = ROLE_TEMPERATURE_DEFAULTS[role_tag]
    return ChatRequest(
        messages=tuple(messages),
        model_id=model_id,
        role_tag=role_tag,
        temperature=temperature,
        max_tokens=max_tokens,
        seed=seed,
    )


@dataclass(frozen=True)
class ChatResponse:
    content: str
    prompt_tokens: int
    completion_tokens: int
    model_id: str


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    dim: int

    def array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


# --- usage accounting ---------------------------------------------------------

@dataclass
class RoleUsage:
    requests: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0


class UsageLedger:
    """Token/cost accounting, updated atomically per response.

    Totals always equal the sum over the per-role breakdown and never
    decrease within a run.
    """

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.total_prompt_tokens = 0
        self.total_completion_tokens = 0
        self.estimated_cost = 0.0
        self.breakdown: dict[str, RoleUsage] = {}

    def add(self, role_tag: str, prompt_tokens: int, completion_tokens: int, cost: float) -> None:
        with self._lock:
            usage = self.breakdown.setdefault(role_tag, RoleUsage())
            usage.requests += 1
            usage.prompt_tokens += prompt_tokens
            usage.completion_tokens += completion_tokens
            self.total_prompt_tokens += prompt_tokens
            self.total_completion_tokens += completion_tokens
            self.estimated_cost += cost

    def total_tokens(self) -> int:
        with self._lock:
            return self.total_prompt_tokens + self.total_completion_tokens

    def role_requests(self, role_tag: str) -> int:
        with self._lock:
            usage = self.breakdown.get(role_tag)
            return usage.requests if usage else 0

    def to_json(self) -> dict:
        with self._lock:
            return {
                "total_prompt_tokens": self.total_prompt_tokens,
                "total_completion_tokens": self.total_completion_tokens,
                "estimated_cost": self.estimated_cost,
                "breakdown": {
                    role: {
                        "requests": u.requests,
                        "prompt_tokens": u.prompt_tokens,
                        "completion_tokens": u.completion_tokens,
                    }
                    for role, u in self.breakdown.items()
                },
            }

    def restore(self, data: dict) -> None:
        """Overwrite this ledger with a serialized state (checkpoint resume)."""
        with self._lock:
            self.total_prompt_tokens = int(data["total_prompt_tokens"])
            self.total_completion_tokens = int(data["total_completion_tokens"])
            self.estimated_cost = float(data["estimated_cost"])
            self.breakdown = {
                role: RoleUsage(
                    requests=int(u["requests"]),
                    prompt_tokens=int(u["prompt_tokens"]),
                    completion_tokens=int(u["completion_tokens"]),
                )
                for role, u in data.get("breakdown", {}).items()
            }

    @classmethod
    def from_json(cls, data: dict) -> "UsageLedger":
        ledger = cls()
        ledger.restore(data)
        return ledger


@dataclass(frozen=True)
class BudgetLimits:
    """Hard stops for a whole run. max_tokens counts generated (completion)
    tokens; max_cost counts the priced total."""

    max_cost: float | None = None
    max_tokens: int | None = None

    def any_set(self) -> bool:
        return self.max_cost is not None or self.max_tokens is not None


class BudgetDecision(Enum):
    CONTINUE = "continue"
    HALT = "halt"


def check_budget(ledger: UsageLedger, limits: BudgetLimits) -> BudgetDecision:
    """Halt iff any set limit is strictly exceeded (boundary inclusive)."""
    if limits.max_tokens is not None and ledger.total_completion_tokens > limits.max_tokens:
        return BudgetDecision.HALT
    if limits.max_cost is not None and ledger.estimated_cost > limits.max_cost:
        return BudgetDecision.HALT
    return BudgetDecision.CONTINUE


# --- mock scripting -----------------------------------------------------------

@dataclass
class MockEntry:
    role_tag: str
    responses: list[str]
    match_substring: str | None = None
    cyclic: bool = False
    cursor: int = 0

    def matches(self, request: ChatRequest) -> bool:
        if self.role_tag != request.role_tag:
            return False
        if self.match_substring is not None:
            return self.match_substring in request.joined_content()
        return True

    def has_remaining(self) -> bool:
        return self.cyclic or self.cursor < len(self.responses)

    def next_response(self) -> str:
        if self.cyclic:
            text = self.responses[self.cursor % len(self.responses)]
        else:
            text = self.responses[self.cursor]
        self.cursor += 1
        return text


class MockScript:
    """Ordered canned responses keyed by role tag and optional content substring.

    Entries are consulted in declaration order; the first matching entry with a
    response remaining serves the request. In strict mode an unmatched or
    exhausted request is an error; otherwise the default response is returned.
    """

    def __init__(self, entries: list[MockEntry], strict: bool = True, default_response: str = ""):
        self.entries = entries
        self.strict = strict
        self.default_response = default_response

    def resolve(self, request: ChatRequest) -> str:
        matched = False
        for entry in self.entries:
            if entry.matches(request):
                matched = True
                if entry.has_remaining():
                    return entry.next_response()
        if self.strict:
            preview = request.joined_content()[:120]
            if matched:
                raise ScriptExhausted(
                    f"all matching entries exhausted for role {request.role_tag!r}: {preview!r}"
                )
            raise ScriptExhausted(f"no entry matches role {request.role_tag!r}: {preview!r}")
        return self.default_response

    def cursors(self) -> list[int]:
        return [entry.cursor for entry in self.entries]

    def restore_cursors(self, cursors: list[int]) -> None:
        if len(cursors) != len(self.entries):
            raise ValueError("cursor list does not match script entries")
        for entry, cursor in zip(self.entries, cursors):
            entry.cursor = cursor

    def to_json(self) -> list:
        data = []
        for entry in self.entries:
            item: dict = {"role_tag": entry.role_tag, "responses": list(entry.responses)}
            if entry.match_substring is not None:
                item["match_substring"] = entry.match_substring
            if entry.cyclic:
                item["cyclic"] = True
            data.append(item)
        return data

    @classmethod
    def from_json(cls, data: list, strict: bool = True, default_response: str = "") -> "MockScript":
        entries = []
        for item in data:
            role_tag = item["role_tag"]
            if role_tag not in ROLE_TAGS:
                raise ValueError(f"unknown role_tag {role_tag!r} in mock script")
            entries.append(
                MockEntry(
                    role_tag=role_tag,
                    responses=list(item["responses"]),
                    match_substring=item.get("match_substring"),
                    cyclic=bool(item.get("cyclic", False)),
                )
            )
        return cls(entries, strict=strict, default_response=default_response)

    @classmethod
    def load(cls, path: str | Path, strict: bool = True, default_response: str = "") -> "MockScript":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls.from_json(data, strict=strict, default_response=default_response)


# --- backend configuration ------------------------------------------------------

@dataclass
class BackendConfig:
    kind: str = "mock"  # mock | remote
    endpoint_url: str | None = None
    api_key_env: str | None = None
    timeout: float = 60.0
    max_retries: int = 3
    retry_backoff: tuple[float, ...] = (1.0, 2.0, 4.0)
    max_concurrent_requests: int = 8
    requests_per_minute: int | None = None
    embedding_model: str | None = None  # None: hashed n-gram fallback
    cost_table: dict[str, tuple[float, float]] = field(default_factory=dict)
    mock_script: MockScript | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("mock", "remote"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == "remote" and (not self.endpoint_url or not self.api_key_env):
            raise ValueError("remote backend requires endpoint_url and api_key_env")
        if self.max_concurrent_requests < 1:
            raise ValueError("max_concurrent_requests must be >= 1")

    def price_of(self, model_id: str, prompt_tokens: int, completion_tokens: int) -> float:
        prices = self.cost_table.get(model_id)
        if prices is None:
            return 0.0
        return (prompt_tokens / 1000.0) * prices[0] + (completion_tokens / 1000.0) * prices[1]


# --- deterministic fallback embeddings -------------------------------------------

def _ngram_bucket(gram: str) -> int:
    digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % EMBEDDING_DIM


def embed_text_fallback(text: str) -> EmbeddingVector:
    """Hashed character 3-gram bag, L2-normalized. Pure function of the text."""
    if not text:
        raise ValueError("cannot embed empty text")
    grams = [text[i : i + 3] for i in range(len(text) - 2)] if len(text) >= 3 else [text]
    vec = np.zeros(EMBEDDING_DIM, dtype=np.float64)
    for gram in grams:
        vec[_ngram_bucket(gram)] += 1.0
    vec /= np.linalg.norm(vec)
    return EmbeddingVector(values=tuple(float(v) for v in vec), dim=EMBEDDING_DIM)


def cosine(a: EmbeddingVector, b: EmbeddingVector) -> float:
    return float(np.dot(a.array(), b.array()))


# --- transport ---------------------------------------------------------------

class HttpTransport:
    """Thin wrapper over requests so tests can inject scripted transports."""

    def __init__(self) -> None:
        self._session = requests.Session()

    def post(self, url: str, headers: dict, body: dict, timeout: float) -> tuple[int, dict]:
        response = self._session.post(url, headers=headers, json=body, timeout=timeout)
        try:
            payload = response.json()
        except ValueError:
            payload = {}
        return response.status_code, payload


def _word_count(text: str) -> int:
    return len(text.split())


class Gateway:
    """Shared client for all LLM traffic in a run.

    Safe for concurrent use: the ledger, mock cursors, and pacing state are
    updated under locks. When budget limits are set, every dispatch is guarded
    and raises BudgetExceeded once a limit is crossed, so no further traffic
    leaves the process.
    """

    def __init__(
        self,
        config: BackendConfig,
        ledger: UsageLedger | None = None,
        limits: BudgetLimits | None = None,
        rng_seed: int = 0,
        transport: HttpTransport | None = None,
    ):
        self.config = config
        self.ledger = ledger if ledger is not None else UsageLedger()
        self.limits = limits or BudgetLimits()
        self.sent_requests: list[ChatRequest] = []
        self._log_lock = threading.Lock()
        self._script_lock = threading.Lock()
        self._pace_lock = threading.Lock()
        self._last_dispatch = 0.0
        self._jitter_rng = random.Random(rng_seed)
        self._transport = transport or HttpTransport()
        if config.kind == "mock" and config.mock_script is None:
            raise ValueError("mock backend requires a mock_script")

    # -- public operations ----------------------------------------------------

    def complete(self, request: ChatRequest) -> ChatResponse:
        self._guard_budget()
        return self._dispatch(request)

    def complete_many(self, requests_batch: list[ChatRequest], parallelism: int = 1) -> list[ChatResponse]:
        """Dispatch a batch; responses align positionally with the requests.

        Output and ledger totals are independent of the parallelism degree:
        mock resolution happens in request order, and ledger updates commute.
        """
        if not requests_batch:
            raise RequestRejected("empty request batch")
        self._guard_budget()
        if self.config.kind == "mock":
            # Resolve canned texts in request order so cursors are assigned
            # deterministically regardless of worker scheduling.
            responses = []
            for i, request in enumerate(requests_batch):
                try:
                    responses.append(self._dispatch(request))
                except Exception as exc:  # noqa: BLE001 - rewrapped with index
                    raise BatchRequestError(i, exc) from exc
            return responses

        workers = max(1, min(parallelism, self.config.max_concurrent_requests))
        results: list[ChatResponse | None] = [None] * len(requests_batch)
        errors: dict[int, Exception] = {}

        def run_one(index: int) -> None:
            try:
                results[index] = self._dispatch(requests_batch[index])
            except Exception as exc:  # noqa: BLE001 - collected below
                errors[index] = exc

        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_one, range(len(requests_batch))))
        if errors:
            index = min(errors)
            raise BatchRequestError(index, errors[index]) from errors[index]
        return [r for r in results if r is not None]

    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        if not texts:
            raise RequestRejected("empty text list")
        if self.config.kind == "remote" and self.config.embedding_model:
            return self._embed_remote(texts)
        return [embed_text_fallback(t) for t in texts]

    def check_budget(self, limits: BudgetLimits | None = None) -> BudgetDecision:
        return check_budget(self.ledger, limits if limits is not None else self.limits)

    # -- internals -------------------------------------------------------------

    def _guard_budget(self) -> None:
        if self.limits.any_set() and self.check_budget() is BudgetDecision.HALT:
            raise BudgetExceeded(
                f"usage limit exceeded: {self.ledger.total_completion_tokens} completion tokens, "
                f"cost {self.ledger.estimated_cost:.4f}"
            )

    def _validate(self, request: ChatRequest) -> None:
        if not request.messages:
            raise RequestRejected("request has no messages")
        for message in request.messages:
            if message.role not in ("system", "user", "assistant"):
                raise RequestRejected(f"invalid message role {message.role!r}")
            if message.role in ("system", "user") and not message.content:
                raise RequestRejected(f"empty content in {message.role} message")
        if request.role_tag not in ROLE_TAGS:
            raise RequestRejected(f"unknown role_tag {request.role_tag!r}")
        if request.temperature < 0:
            raise RequestRejected("temperature must be >= 0")
        if request.max_tokens <= 0:
            raise RequestRejected("max_tokens must be positive")

    def _record(self, request: ChatRequest) -> None:
        with self._log_lock:
            self.sent_requests.append(request)

    def _dispatch(self, request: ChatRequest) -> ChatResponse:
        self._validate(request)
        if self.config.kind == "mock":
            return self._dispatch_mock(request)
        return self._dispatch_remote(request)

    def _dispatch_mock(self, request: ChatRequest) -> ChatResponse:
        assert self.config.mock_script is not None
        with self._script_lock:
            text = self.config.mock_script.resolve(request)
        self._record(request)
        prompt_tokens = _word_count(request.joined_content())
        completion_tokens = _word_count(text)
        cost = self.config.price_of(request.model_id, prompt_tokens, completion_tokens)
        self.ledger.add(request.role_tag, prompt_tokens, completion_tokens, cost)
        return ChatResponse(text, prompt_tokens, completion_tokens, request.model_id)

    def _pace(self) -> None:
        rpm = self.config.requests_per_minute
        if not rpm:
            return
        interval = 60.0 / rpm
        with self._pace_lock:
            now = time.monotonic()
            wait = self._last_dispatch + interval - now
            if wait > 0:
                time.sleep(wait)
                now = time.monotonic()
            self._last_dispatch = now

    def _auth_headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        env_name = self.config.api_key_env
        if env_name:
            key = os.environ.get(env_name, "")
            if not key:
                raise RequestRejected(f"environment variable {env_name} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _backoff_delay(self, attempt: int) -> float:
        schedule = self.config.retry_backoff or (1.0,)
        base = schedule[min(attempt, len(schedule) - 1)]
        with self._pace_lock:
            jitter = self._jitter_rng.random()
        return base * (1.0 + 0.25 * jitter)

    def _post_with_retries(self, url: str, body: dict) -> dict:
        last_error: str = "unknown"
        for attempt in range(self.config.max_retries + 1):
            try:
                status, payload = self._transport.post(
                    url, self._auth_headers(), body, self.config.timeout
                )
            except requests.RequestException as exc:
                last_error = str(exc)
                status, payload = None, {}
            else:
                if status is not None and 200 <= status < 300:
                    return payload
                last_error = f"HTTP {status}: {json.dumps(payload)[:200]}"
                if status is not None and 400 <= status < 500 and status != 429:
                    raise RequestRejected(last_error)
            if attempt < self.config.max_retries:
                time.sleep(self._backoff_delay(attempt))
        raise BackendUnavailable(f"gave up after {self.config.max_retries} retries: {last_error}")

    def _dispatch_remote(self, request: ChatRequest) -> ChatResponse:
        self._pace()
        body: dict = {
            "model": request.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.seed is not None:
            body["seed"] = request.seed
        url = f"{self.config.endpoint_url.rstrip('/')}/chat/completions"
        payload = self._post_with_retries(url, body)
        try:
            content = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(f"malformed completion payload: {exc}") from exc
        usage = payload.get("usage") or {}
        prompt_tokens = int(usage.get("prompt_tokens", _word_count(request.joined_content())))
        completion_tokens = int(usage.get("completion_tokens", _word_count(content)))
        self._record(request)
        cost = self.config.price_of(request.model_id, prompt_tokens, completion_tokens)
        self.ledger.add(request.role_tag, prompt_tokens, completion_tokens, cost)
        return ChatResponse(content, prompt_tokens, completion_tokens, request.model_id)

    def _embed_remote(self, texts: list[str]) -> list[EmbeddingVector]:
        url = f"{self.config.endpoint_url.rstrip('/')}/embeddings"
        body = {"model": self.config.embedding_model, "input": texts}
        payload = self._post_with_retries(url, body)
        try:
            rows = sorted(payload["data"], key=lambda item: item["index"])
            vectors = []
            for row in rows:
                raw = np.asarray(row["embedding"], dtype=np.float64)
                raw /= np.linalg.norm(raw)
                vectors.append(EmbeddingVector(values=tuple(float(v) for v in raw), dim=len(raw)))
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendUnavailable(f"malformed embedding payload: {exc}") from exc
        if len(vectors) != len(texts):
            raise BackendUnavailable("embedding payload count mismatch")
        return vectors
