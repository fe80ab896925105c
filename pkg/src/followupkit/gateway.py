"""Chat-completion and embedding access with retries, caching, and transcripts.

One Gateway fronts a provider (OpenAI-compatible HTTP endpoint, scripted
mock, or transcript replay). Every network attempt lands in an append-only
JSONL transcript; successful responses are content-addressed in a disk cache
keyed by a stable hash of (messages, model, temperature), so identical
requests are never re-spent. Refusals are data (finish_reason "refusal"),
not exceptions.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import requests

FINISH_REASONS = ("stop", "length", "refusal", "error")


class GatewayError(RuntimeError):
    """Base class for provider and transport failures."""


class TransientProviderError(GatewayError):
    """Retryable failure: timeout, connection reset, 429, 5xx."""


class AuthenticationError(GatewayError):
    """Fatal credential failure; never retried."""


class RetryExhaustedError(GatewayError):
    """All retry_cap attempts failed."""


class UnscriptedRequestError(GatewayError):
    """The mock script has no entry matching a request."""


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[tuple[str, str], ...]  # (role, content) pairs
    model: str
    temperature: float
    max_tokens: int

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be nonempty")
        roles = [r for r, _ in self.messages]
        non_system = [r for r in roles if r != "system"]
        if non_system and non_system[0] != "user":
            raise ValueError("first non-system message must be from the user")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class ChatResponse:
    content: str
    finish_reason: str
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self):
        if self.finish_reason not in FINISH_REASONS:
            raise ValueError(f"finish_reason must be one of {FINISH_REASONS}")
        if self.finish_reason == "stop" and not self.content:
            raise ValueError("finish_reason 'stop' requires nonempty content")

    @property
    def refused(self) -> bool:
        return self.finish_reason == "refusal"


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    @property
    def dimension(self) -> int:
        return len(self.values)


@dataclass
class GatewayConfig:
    endpoint: str = ""
    api_key_env: str = ""
    chat_model: str = "mock-chat"
    embed_model: str = "mock-embed"
    temperature: float = 1.0
    max_tokens: int = 1024
    max_in_flight: int = 8
    retry_cap: int = 3
    rate_per_sec: float | None = None

    @classmethod
    def from_file(cls, path: str | Path) -> "GatewayConfig":
        with Path(path).open("r", encoding="utf-8") as fh:
            raw = json.load(fh)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown gateway config keys: {sorted(unknown)}")
        return cls(**raw)


def request_hash(req: ChatRequest) -> str:
    """Stable digest of (messages, model, temperature)."""
    payload = json.dumps(
        {
            "messages": [[role, content] for role, content in req.messages],
            "model": req.model,
            "temperature": req.temperature,
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def embed_hash(model: str, texts: Sequence[str]) -> str:
    payload = json.dumps({"kind": "embed", "model": model, "texts": list(texts)}, ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class Provider(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...

    def embed(self, texts: Sequence[str], model: str) -> list[list[float]]: ...


# ---------------------------------------------------------------------------
# HTTP provider (OpenAI-compatible JSON API)
# ---------------------------------------------------------------------------


class HttpProvider:
    """Speaks the chat-completions and embeddings JSON dialect over HTTPS."""

    def __init__(self, endpoint: str, api_key_env: str, timeout: float = 60.0):
        self.endpoint = endpoint.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout = timeout

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if not key:
                raise AuthenticationError(
                    f"environment variable {self.api_key_env!r} is not set"
                )
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post(self, path: str, payload: dict) -> dict:
        try:
            resp = requests.post(
                f"{self.endpoint}{path}", json=payload, headers=self._headers(), timeout=self.timeout
            )
        except (requests.Timeout, requests.ConnectionError) as exc:
            raise TransientProviderError(str(exc)) from exc
        if resp.status_code in (401, 403):
            raise AuthenticationError(f"provider returned {resp.status_code}")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientProviderError(f"provider returned {resp.status_code}")
        if resp.status_code >= 400:
            raise GatewayError(f"provider returned {resp.status_code}: {resp.text[:200]}")
        return resp.json()

    def complete(self, request: ChatRequest) -> ChatResponse:
        payload = {
            "model": request.model,
            "messages": [{"role": r, "content": c} for r, c in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        data = self._post("/chat/completions", payload)
        try:
            choice = data["choices"][0]
            content = choice["message"].get("content") or ""
            finish = choice.get("finish_reason", "stop")
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed completion payload: {exc}") from exc
        if finish == "content_filter":
            finish = "refusal"
        elif finish not in FINISH_REASONS:
            finish = "stop"
        if finish == "stop" and not content:
            finish = "error"
        usage = data.get("usage", {})
        return ChatResponse(
            content=content,
            finish_reason=finish,
            prompt_tokens=usage.get("prompt_tokens", 0),
            completion_tokens=usage.get("completion_tokens", 0),
        )

    def embed(self, texts: Sequence[str], model: str) -> list[list[float]]:
        data = self._post("/embeddings", {"model": model, "input": list(texts)})
        try:
            rows = sorted(data["data"], key=lambda d: d["index"])
            return [list(map(float, row["embedding"])) for row in rows]
        except (KeyError, TypeError) as exc:
            raise GatewayError(f"malformed embedding payload: {exc}") from exc


# ---------------------------------------------------------------------------
# Scripted mock provider
# ---------------------------------------------------------------------------

_WORD_RE = re.compile(r"[a-z0-9']+")


def hash_embedding(text: str, dim: int = 32) -> list[float]:
    """Deterministic bag-of-words embedding: tokens bucketed by digest, L2-normalized.

    Word order is irrelevant by construction ("cloud rain" == "rain cloud").
    """
    vec = [0.0] * dim
    for token in _WORD_RE.findall(text.lower()):
        idx = int(hashlib.sha256(token.encode("utf-8")).hexdigest(), 16) % dim
        vec[idx] += 1.0
    norm = math.sqrt(sum(v * v for v in vec))
    if norm == 0.0:
        vec[0] = 1.0
        norm = 1.0
    return [v / norm for v in vec]


class MockProvider:
    """Answers requests from an ordered script of (matcher, outcome) entries.

    A matcher is "any" or a literal substring tested against the concatenated
    message contents. The first matching entry answers the request and is
    retired, unless it is the last remaining entry that matches (the final
    match stays active and answers repeatedly). A request no entry matches
    raises UnscriptedRequestError naming the request hash.

    Entry shapes: {"match": ..., "reply": str} or {"match": ..., "fail":
    "transient" | "refusal" | "auth"}, optionally {"delay_ms": int}.
    """

    def __init__(self, script: Sequence[dict], embed_dim: int = 32):
        self._entries: list[dict] = []
        for i, entry in enumerate(script):
            if "match" not in entry:
                raise ValueError(f"script entry {i} lacks 'match'")
            if ("reply" in entry) == ("fail" in entry):
                raise ValueError(f"script entry {i} needs exactly one of 'reply' or 'fail'")
            if "fail" in entry and entry["fail"] not in ("transient", "refusal", "auth"):
                raise ValueError(f"script entry {i} has unknown fail kind {entry['fail']!r}")
            self._entries.append(dict(entry))
        self.embed_dim = embed_dim
        self._lock = threading.Lock()

    @staticmethod
    def _matches(entry: dict, text: str) -> bool:
        matcher = entry["match"]
        return matcher == "any" or matcher in text

    def remaining(self) -> int:
        with self._lock:
            return len(self._entries)

    def complete(self, request: ChatRequest) -> ChatResponse:
        text = "\n".join(content for _, content in request.messages)
        with self._lock:
            matches = [i for i, e in enumerate(self._entries) if self._matches(e, text)]
            if not matches:
                raise UnscriptedRequestError(
                    f"no script entry matches request {request_hash(request)}"
                )
            idx = matches[0]
            entry = self._entries[idx]
            if len(matches) > 1:
                del self._entries[idx]
        delay = entry.get("delay_ms")
        if delay:
            time.sleep(delay / 1000.0)
        if "fail" in entry:
            kind = entry["fail"]
            if kind == "transient":
                raise TransientProviderError("scripted transient failure")
            if kind == "auth":
                raise AuthenticationError("scripted auth failure")
            return ChatResponse(content=entry.get("reply", ""), finish_reason="refusal")
        reply = entry["reply"]
        return ChatResponse(content=reply, finish_reason="stop" if reply else "error")

    def embed(self, texts: Sequence[str], model: str) -> list[list[float]]:
        return [hash_embedding(t, self.embed_dim) for t in texts]


def load_mock_script(path: str | Path) -> list[dict]:
    with Path(path).open("r", encoding="utf-8") as fh:
        script = json.load(fh)
    if not isinstance(script, list):
        raise ValueError("mock script must be a JSON array of entries")
    return script


def make_mock(script: Sequence[dict], embed_dim: int = 32) -> MockProvider:
    return MockProvider(script, embed_dim=embed_dim)


class ReplayProvider:
    """Serves responses recorded in a transcript file, keyed by request hash."""

    def __init__(self, transcript_path: str | Path, embed_dim: int = 32):
        self._chat: dict[str, dict] = {}
        self._embed: dict[str, list[list[float]]] = {}
        self.embed_dim = embed_dim
        with Path(transcript_path).open("r", encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                entry = json.loads(line)
                if entry.get("error"):
                    continue
                if entry.get("kind") == "chat" and entry.get("response"):
                    self._chat[entry["request_hash"]] = entry["response"]
                elif entry.get("kind") == "embed" and entry.get("vectors"):
                    self._embed[entry["request_hash"]] = entry["vectors"]

    def complete(self, request: ChatRequest) -> ChatResponse:
        h = request_hash(request)
        if h not in self._chat:
            raise UnscriptedRequestError(f"transcript has no response for request {h}")
        rec = self._chat[h]
        return ChatResponse(content=rec["content"], finish_reason=rec["finish_reason"])

    def embed(self, texts: Sequence[str], model: str) -> list[list[float]]:
        h = embed_hash(model, texts)
        if h in self._embed:
            return self._embed[h]
        return [hash_embedding(t, self.embed_dim) for t in texts]


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------


class Gateway:
    """Provider front-end: retries, rate limiting, disk cache, transcripts."""

    def __init__(
        self,
        provider: Provider,
        *,
        chat_model: str = "mock-chat",
        embed_model: str = "mock-embed",
        temperature: float = 1.0,
        max_tokens: int = 1024,
        retry_cap: int = 3,
        backoff_base: float = 0.05,
        max_in_flight: int = 8,
        rate_per_sec: float | None = None,
        cache_dir: str | Path | None = None,
        transcript_path: str | Path | None = None,
    ):
        if retry_cap < 1:
            raise ValueError("retry_cap must be >= 1")
        self.provider = provider
        self.chat_model = chat_model
        self.embed_model = embed_model
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.retry_cap = retry_cap
        self.backoff_base = backoff_base
        self._sem = threading.Semaphore(max_in_flight)
        self._rate_lock = threading.Lock()
        self._min_interval = 1.0 / rate_per_sec if rate_per_sec else 0.0
        self._next_slot = 0.0
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.transcript_path = Path(transcript_path) if transcript_path else None
        self._log_lock = threading.Lock()

    @classmethod
    def from_config(
        cls,
        config: GatewayConfig,
        provider: Provider | None = None,
        *,
        cache_dir: str | Path | None = None,
        transcript_path: str | Path | None = None,
    ) -> "Gateway":
        if provider is None:
            if not config.endpoint:
                raise ValueError("config has no endpoint and no provider was given")
            provider = HttpProvider(config.endpoint, config.api_key_env)
        return cls(
            provider,
            chat_model=config.chat_model,
            embed_model=config.embed_model,
            temperature=config.temperature,
            max_tokens=config.max_tokens,
            retry_cap=config.retry_cap,
            max_in_flight=config.max_in_flight,
            rate_per_sec=config.rate_per_sec,
            cache_dir=cache_dir,
            transcript_path=transcript_path,
        )

    # -- plumbing ----------------------------------------------------------

    def _pace(self) -> None:
        if not self._min_interval:
            return
        with self._rate_lock:
            now = time.monotonic()
            wait = self._next_slot - now
            self._next_slot = max(now, self._next_slot) + self._min_interval
        if wait > 0:
            time.sleep(wait)

    def _log(self, entry: dict) -> None:
        if not self.transcript_path:
            return
        entry = dict(entry, timestamp=time.time())
        with self._log_lock:
            with self.transcript_path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, ensure_ascii=False) + "\n")
                fh.flush()

    def _cache_path(self, key: str) -> Path | None:
        return self.cache_dir / f"{key}.json" if self.cache_dir else None

    def _cache_get(self, key: str) -> dict | None:
        path = self._cache_path(key)
        if path and path.exists():
            with path.open("r", encoding="utf-8") as fh:
                return json.load(fh)
        return None

    def _cache_put(self, key: str, value: dict) -> None:
        path = self._cache_path(key)
        if not path:
            return
        tmp = path.with_suffix(".tmp")
        with tmp.open("w", encoding="utf-8") as fh:
            json.dump(value, fh, ensure_ascii=False)
        tmp.replace(path)

    # -- chat --------------------------------------------------------------

    def complete(self, request: ChatRequest, use_cache: bool = True) -> ChatResponse:
        """Run one chat request through cache, rate limit, and the retry loop."""
        h = request_hash(request)
        if use_cache:
            cached = self._cache_get(h)
            if cached is not None:
                return ChatResponse(
                    content=cached["content"], finish_reason=cached["finish_reason"]
                )

        with self._sem:
            last_error: GatewayError | None = None
            for attempt in range(1, self.retry_cap + 1):
                self._pace()
                base = {
                    "kind": "chat",
                    "request_hash": h,
                    "attempt": attempt,
                    "model": request.model,
                    "temperature": request.temperature,
                    "messages": [[r, c] for r, c in request.messages],
                }
                try:
                    response = self.provider.complete(request)
                except TransientProviderError as exc:
                    last_error = exc
                    self._log(dict(base, response=None, error=str(exc)))
                    if attempt < self.retry_cap:
                        time.sleep(self.backoff_base * (2 ** (attempt - 1)))
                    continue
                except GatewayError as exc:
                    self._log(dict(base, response=None, error=str(exc)))
                    raise
                self._log(
                    dict(
                        base,
                        response={
                            "content": response.content,
                            "finish_reason": response.finish_reason,
                        },
                        error=None,
                    )
                )
                self._cache_put(
                    h,
                    {"content": response.content, "finish_reason": response.finish_reason},
                )
                return response
            raise RetryExhaustedError(
                f"request {h} failed after {self.retry_cap} attempts: {last_error}"
            )

    def chat(
        self, messages: Sequence[tuple[str, str]], use_cache: bool = True
    ) -> tuple[ChatResponse, str]:
        """Convenience wrapper using the configured model settings.

        Returns (response, request_hash) so callers can keep transcript refs.
        """
        request = ChatRequest(
            messages=tuple(messages),
            model=self.chat_model,
            temperature=self.temperature,
            max_tokens=self.max_tokens,
        )
        return self.complete(request, use_cache=use_cache), request_hash(request)

    # -- embeddings --------------------------------------------------------

    def embed(self, texts: Sequence[str], use_cache: bool = True) -> list[EmbeddingVector]:
        """Embed texts in order, L2-normalizing every vector."""
        if not texts:
            raise GatewayError("embed requires at least one text")
        h = embed_hash(self.embed_model, texts)
        if use_cache:
            cached = self._cache_get(h)
            if cached is not None:
                return [EmbeddingVector(tuple(v)) for v in cached["vectors"]]

        with self._sem:
            last_error: GatewayError | None = None
            for attempt in range(1, self.retry_cap + 1):
                self._pace()
                base = {
                    "kind": "embed",
                    "request_hash": h,
                    "attempt": attempt,
                    "model": self.embed_model,
                    "count": len(texts),
                }
                try:
                    raw = self.provider.embed(texts, self.embed_model)
                except TransientProviderError as exc:
                    last_error = exc
                    self._log(dict(base, vectors=None, error=str(exc)))
                    if attempt < self.retry_cap:
                        time.sleep(self.backoff_base * (2 ** (attempt - 1)))
                    continue
                except GatewayError as exc:
                    self._log(dict(base, vectors=None, error=str(exc)))
                    raise
                if len(raw) != len(texts):
                    raise GatewayError(
                        f"provider returned {len(raw)} vectors for {len(texts)} texts"
                    )
                dims = {len(v) for v in raw}
                if len(dims) > 1:
                    raise GatewayError(f"inconsistent embedding dimensions: {sorted(dims)}")
                normalized = [self._normalize(v) for v in raw]
                self._log(dict(base, vectors=normalized, error=None))
                self._cache_put(h, {"vectors": normalized})
                return [EmbeddingVector(tuple(v)) for v in normalized]
            raise RetryExhaustedError(
                f"embedding request {h} failed after {self.retry_cap} attempts: {last_error}"
            )

    @staticmethod
    def _normalize(vec: Sequence[float]) -> list[float]:
        norm = math.sqrt(sum(v * v for v in vec))
        if norm == 0.0:
            raise GatewayError("provider returned a zero embedding vector")
        return [v / norm for v in vec]

    def embed_values(self, texts: Sequence[str]) -> list[list[float]]:
        """Plain float lists, for metric code that just wants vectors."""
        return [list(v.values) for v in self.embed(texts)]
