"""Completion backends: an OpenAI-compatible HTTP client and a scripted mock.

Both expose a single `complete(request)` method returning a `Completion`
with per-token log-probabilities and top-K alternatives. A JSONL response
cache can short-circuit repeated requests.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Protocol, Sequence

import requests

logger = logging.getLogger(__name__)

API_KEY_ENV_VAR = "CALIBRA_API_KEY"

DEFAULT_MAX_TOKENS = 120
DEFAULT_TEMPERATURE = 1.2

_TOKEN_RE = re.compile(r"\S+\s*|\s+")


class BackendError(Exception):
    """Base class for backend failures."""


class TransportError(BackendError):
    """Retryable network or rate-limit failure."""


class MalformedResponseError(BackendError):
    """The endpoint returned a body we cannot parse; never retried."""


class CapabilityError(BackendError):
    """The endpoint cannot serve a required feature (e.g. logprobs)."""


class ScriptError(BackendError):
    """Mock script construction or lookup failure."""


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    max_tokens: int = DEFAULT_MAX_TOKENS
    temperature: float = DEFAULT_TEMPERATURE
    top_logprobs: int = 0
    seed: Optional[int] = None
    stop: Optional[tuple[str, ...]] = None

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 0 <= self.top_logprobs <= 5:
            raise ValueError("top_logprobs must be in [0, 5]")
        if self.stop is not None:
            object.__setattr__(self, "stop", tuple(self.stop))

    def to_dict(self) -> dict:
        d = {
            "prompt": self.prompt,
            "max_tokens": self.max_tokens,
            "temperature": self.temperature,
            "top_logprobs": self.top_logprobs,
        }
        if self.seed is not None:
            d["seed"] = self.seed
        if self.stop is not None:
            d["stop"] = list(self.stop)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CompletionRequest":
        return cls(
            prompt=d["prompt"],
            max_tokens=d["max_tokens"],
            temperature=d["temperature"],
            top_logprobs=d.get("top_logprobs", 0),
            seed=d.get("seed"),
            stop=tuple(d["stop"]) if d.get("stop") else None,
        )


@dataclass(frozen=True)
class Completion:
    text: str
    tokens: tuple[str, ...]
    token_logprobs: tuple[float, ...]
    top_logprobs: tuple[dict, ...]
    finish_reason: Literal["stop", "length", "error"] = "stop"

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "token_logprobs", tuple(self.token_logprobs))
        object.__setattr__(self, "top_logprobs", tuple(dict(m) for m in self.top_logprobs))
        if not (len(self.tokens) == len(self.token_logprobs) == len(self.top_logprobs)):
            raise ValueError("tokens, token_logprobs and top_logprobs must align")

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "tokens": list(self.tokens),
            "token_logprobs": list(self.token_logprobs),
            "top_logprobs": [dict(m) for m in self.top_logprobs],
            "finish_reason": self.finish_reason,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Completion":
        return cls(
            text=d["text"],
            tokens=tuple(d["tokens"]),
            token_logprobs=tuple(d["token_logprobs"]),
            top_logprobs=tuple(d["top_logprobs"]),
            finish_reason=d.get("finish_reason", "stop"),
        )


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> Completion: ...


def tokenize(text: str) -> list[str]:
    """Whitespace-preserving split; the pieces concatenate back to the text."""
    return _TOKEN_RE.findall(text)


def request_hash(request: CompletionRequest) -> str:
    """Stable hex digest of the canonical request serialization."""
    canonical = json.dumps(request.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class CacheEntry:
    request_hash: str
    request: CompletionRequest
    completion: Completion
    created_at: float

    def to_dict(self) -> dict:
        return {
            "request_hash": self.request_hash,
            "request": self.request.to_dict(),
            "completion": self.completion.to_dict(),
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CacheEntry":
        return cls(
            request_hash=d["request_hash"],
            request=CompletionRequest.from_dict(d["request"]),
            completion=Completion.from_dict(d["completion"]),
            created_at=d["created_at"],
        )


class ResponseCache:
    """Append-only JSONL cache keyed by the canonical request hash.

    Concurrent reads are lock-free once loaded; appends are serialized.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, Completion] = {}
        if self.path.exists():
            with self.path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    entry = CacheEntry.from_dict(json.loads(line))
                    self._entries[entry.request_hash] = entry.completion

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, request: CompletionRequest) -> Optional[Completion]:
        return self._entries.get(request_hash(request))

    def put(self, request: CompletionRequest, completion: Completion) -> None:
        key = request_hash(request)
        entry = CacheEntry(
            request_hash=key, request=request, completion=completion, created_at=time.time()
        )
        with self._lock:
            if key in self._entries:
                return
            self._entries[key] = completion
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry.to_dict(), sort_keys=True) + "\n")


def complete(
    backend: Backend,
    request: CompletionRequest,
    cache: Optional[ResponseCache] = None,
    max_attempts: int = 3,
    backoff_seconds: float = 0.5,
) -> Completion:
    """Run a completion with caching and bounded retry on transport errors.

    Malformed responses are surfaced immediately; only transport and
    rate-limit failures are retried, with exponential backoff.
    """
    if cache is not None:
        hit = cache.get(request)
        if hit is not None:
            return hit
    last_error: Optional[Exception] = None
    for attempt in range(max_attempts):
        try:
            completion = backend.complete(request)
            break
        except TransportError as exc:
            last_error = exc
            if attempt + 1 < max_attempts:
                delay = backoff_seconds * (2**attempt)
                logger.warning("transport error (%s); retrying in %.1fs", exc, delay)
                time.sleep(delay)
    else:
        raise TransportError(f"giving up after {max_attempts} attempts: {last_error}")
    if cache is not None:
        cache.put(request, completion)
    return completion


@dataclass(frozen=True)
class MockResponse:
    """One scripted reply; `texts` with several entries cycles by request seed."""

    texts: tuple[str, ...]
    logprobs: Optional[tuple[float, ...]] = None
    top_logprobs: Optional[tuple[dict, ...]] = None

    def pick(self, seed: Optional[int]) -> str:
        index = (seed or 0) % len(self.texts)
        return self.texts[index]


@dataclass(frozen=True)
class MockRule:
    match: Literal["exact", "prefix"]
    pattern: str
    response: MockResponse


class MockBackend:
    """Deterministic scripted backend.

    Lookup is pure: the reply depends only on the request (including its
    seed), never on call order. Exact rules beat prefix rules; an ambiguous
    prefix rule set is rejected at construction. The call counter is
    telemetry only.
    """

    def __init__(
        self,
        rules: Sequence[MockRule],
        fallback: Literal["error", "unknown"] = "error",
    ):
        self._exact = {}
        self._prefixes = []
        for rule in rules:
            if rule.match == "exact":
                if rule.pattern in self._exact:
                    raise ScriptError(f"duplicate exact rule for prompt {rule.pattern[:60]!r}")
                self._exact[rule.pattern] = rule.response
            else:
                self._prefixes.append(rule)
        for i, a in enumerate(self._prefixes):
            for b in self._prefixes[i + 1 :]:
                if a.pattern.startswith(b.pattern) or b.pattern.startswith(a.pattern):
                    raise ScriptError(
                        f"ambiguous prefix rules: {a.pattern[:40]!r} and {b.pattern[:40]!r}"
                    )
        self.fallback = fallback
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def call_count(self) -> int:
        return self._calls

    def reset_call_count(self) -> None:
        with self._lock:
            self._calls = 0

    def _lookup(self, prompt: str) -> Optional[MockResponse]:
        if prompt in self._exact:
            return self._exact[prompt]
        for rule in self._prefixes:
            if prompt.startswith(rule.pattern):
                return rule.response
        return None

    def complete(self, request: CompletionRequest) -> Completion:
        with self._lock:
            self._calls += 1
        response = self._lookup(request.prompt)
        if response is None:
            if self.fallback == "unknown":
                return _synthesize("UNKNOWN", None, None)
            raise ScriptError(f"no script entry matches prompt: {request.prompt[:120]!r}")
        text = response.pick(request.seed)
        return _synthesize(text, response.logprobs, response.top_logprobs)


def _synthesize(
    text: str,
    logprobs: Optional[Sequence[float]],
    top_logprobs: Optional[Sequence[dict]],
) -> Completion:
    tokens = tokenize(text)
    if not logprobs:
        logprobs = [0.0] * len(tokens)
    logprobs = list(logprobs)
    # Scripted logprobs take precedence over whitespace tokenization; reshape
    # the token list to match while keeping concatenation equal to the text.
    if len(logprobs) < len(tokens):
        head, tail = tokens[: len(logprobs) - 1], tokens[len(logprobs) - 1 :]
        tokens = head + ["".join(tail)]
    elif len(logprobs) > len(tokens):
        tokens = tokens + [""] * (len(logprobs) - len(tokens))
    if top_logprobs is None:
        top_logprobs = [{tok: lp} for tok, lp in zip(tokens, logprobs)]
    return Completion(
        text=text,
        tokens=tuple(tokens),
        token_logprobs=tuple(logprobs),
        top_logprobs=tuple(top_logprobs),
        finish_reason="stop",
    )


def mock_from_script(
    entries: dict,
    fallback: Literal["error", "unknown"] = "error",
) -> MockBackend:
    """Build a mock backend from a plain dict script.

    Keys are prompts; values are either a reply string, a list of reply
    strings (cycled by request seed), or a dict with keys `text`/`texts`,
    optional `logprobs`, `top_logprobs`, and `match` ("exact"|"prefix").
    """
    rules = []
    for pattern, value in entries.items():
        match: Literal["exact", "prefix"] = "exact"
        logprobs = None
        top_lp = None
        if isinstance(value, str):
            texts: tuple[str, ...] = (value,)
        elif isinstance(value, list):
            texts = tuple(value)
        elif isinstance(value, dict):
            if "texts" in value:
                texts = tuple(value["texts"])
            else:
                texts = (value["text"],)
            match = value.get("match", "exact")
            if value.get("logprobs") is not None:
                logprobs = tuple(value["logprobs"])
            if value.get("top_logprobs") is not None:
                top_lp = tuple(value["top_logprobs"])
        else:
            raise ScriptError(f"unsupported script value for {pattern[:60]!r}")
        rules.append(
            MockRule(
                match=match,
                pattern=pattern,
                response=MockResponse(texts=texts, logprobs=logprobs, top_logprobs=top_lp),
            )
        )
    return MockBackend(rules, fallback=fallback)


def load_mock_script(path: str | Path) -> MockBackend:
    """Load a JSON mock script: {"fallback": ..., "entries": {...}}."""
    with Path(path).open("r", encoding="utf-8") as fh:
        data = json.load(fh)
    return mock_from_script(data.get("entries", {}), fallback=data.get("fallback", "error"))


class HttpBackend:
    """Client for an OpenAI-compatible /v1/completions endpoint."""

    def __init__(
        self,
        base_url: str,
        model_id: str,
        api_key: Optional[str] = None,
        timeout: float = 60.0,
        session: Optional[requests.Session] = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model_id = model_id
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV_VAR)
        self.timeout = timeout
        self.session = session or requests.Session()

    def _body(self, request: CompletionRequest) -> dict:
        body = {
            "model": self.model_id,
            "prompt": request.prompt,
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        }
        if request.top_logprobs > 0:
            body["logprobs"] = request.top_logprobs
        if request.stop:
            body["stop"] = list(request.stop)
        return body

    def complete(self, request: CompletionRequest) -> Completion:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self.session.post(
                f"{self.base_url}/v1/completions",
                json=self._body(request),
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code == 429:
            raise TransportError(f"rate limited: {resp.text[:200]}")
        if not 200 <= resp.status_code < 300:
            raise BackendError(f"HTTP {resp.status_code}: {resp.text[:500]}")
        try:
            payload = resp.json()
            choice = payload["choices"][0]
            text = choice["text"]
        except (ValueError, KeyError, IndexError) as exc:
            raise MalformedResponseError(f"unparseable completion body: {exc}") from exc
        logprobs = choice.get("logprobs")
        if request.top_logprobs > 0 and not logprobs:
            raise CapabilityError(
                "backend returned no logprobs but top_logprobs was requested; "
                "token-probability and P(True) extraction need a logprobs-capable endpoint"
            )
        if logprobs:
            tokens = tuple(logprobs.get("tokens", ()))
            token_logprobs = tuple(logprobs.get("token_logprobs", ()))
            top = tuple(logprobs.get("top_logprobs") or ({},) * len(tokens))
        else:
            tokens = tuple(tokenize(text))
            token_logprobs = (0.0,) * len(tokens)
            top = tuple({t: 0.0} for t in tokens)
        finish = choice.get("finish_reason", "stop")
        if finish not in ("stop", "length"):
            finish = "error"
        return Completion(
            text=text,
            tokens=tokens,
            token_logprobs=token_logprobs,
            top_logprobs=top,
            finish_reason=finish,
        )
