"""Completion backends and the on-disk response cache.

A backend is anything with a ``model_id``, a ``decoding`` and a
``generate(prompt, attempt)`` method. :func:`complete` wraps a backend with
caching and retry-with-backoff; every call the pipeline makes goes through
it.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Protocol

import httpx

log = logging.getLogger(__name__)

DEFAULT_API_KEY_ENV = "CULTURALEVAL_API_KEY"


class CompletionError(RuntimeError):
    """The backend kept failing after all retries."""

    def __init__(self, message: str, status: int | None = None):
        self.status = status
        super().__init__(message)


class TransientError(CompletionError):
    """A failure worth retrying (transport error, 429, 5xx)."""


class CacheError(RuntimeError):
    """A cache file is unreadable or does not belong to its key."""


@dataclass(frozen=True)
class Decoding:
    temperature: float = 0.0
    max_tokens: int = 1024
    seed: int | None = 0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


class CompletionBackend(Protocol):
    model_id: str
    decoding: Decoding

    def generate(self, prompt: str, attempt: int = 0) -> str: ...


@dataclass
class HttpBackend:
    """HTTP completion endpoint.

    ``wire="simple"`` posts ``{model, prompt, temperature, max_tokens, seed}``
    and reads ``{text}``. ``wire="openai-chat"`` maps the same request onto
    the common ``/chat/completions`` shape.
    """

    endpoint: str
    model_id: str
    decoding: Decoding = field(default_factory=Decoding)
    wire: str = "simple"
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout: float = 120.0

    def __post_init__(self) -> None:
        if self.wire not in ("simple", "openai-chat"):
            raise ValueError(f"unknown wire format {self.wire!r}")

    def request_body(self, prompt: str, attempt: int = 0) -> dict:
        seed = None if self.decoding.seed is None else self.decoding.seed + attempt
        if self.wire == "openai-chat":
            body = {
                "model": self.model_id,
                "messages": [{"role": "user", "content": prompt}],
                "temperature": self.decoding.temperature,
                "max_tokens": self.decoding.max_tokens,
            }
        else:
            body = {
                "model": self.model_id,
                "prompt": prompt,
                "temperature": self.decoding.temperature,
                "max_tokens": self.decoding.max_tokens,
            }
        if seed is not None:
            body["seed"] = seed
        return body

    def parse_response(self, payload: Mapping) -> str:
        try:
            if self.wire == "openai-chat":
                return payload["choices"][0]["message"]["content"]
            return payload["text"]
        except (KeyError, IndexError, TypeError):
            raise CompletionError(f"unexpected response shape from {self.endpoint}") from None

    def generate(self, prompt: str, attempt: int = 0) -> str:
        headers = {}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = httpx.post(self.endpoint, json=self.request_body(prompt, attempt), headers=headers, timeout=self.timeout)
        except httpx.HTTPError as exc:
            raise TransientError(f"transport error talking to {self.endpoint}: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientError(f"HTTP {resp.status_code} from {self.endpoint}", resp.status_code)
        if resp.status_code >= 400:
            raise CompletionError(f"HTTP {resp.status_code} from {self.endpoint}: {resp.text[:200]}", resp.status_code)
        return self.parse_response(resp.json())


@dataclass
class MockBackend:
    """Offline backend answering from a map, a callable, or a default."""

    model_id: str = "mock"
    responses: Mapping[str, str] | Callable[[str], str] | None = None
    default: str | None = None
    decoding: Decoding = field(default_factory=Decoding)
    calls: int = 0

    def generate(self, prompt: str, attempt: int = 0) -> str:
        self.calls += 1
        if callable(self.responses):
            return self.responses(prompt)
        if self.responses is not None and prompt in self.responses:
            return self.responses[prompt]
        if self.default is None:
            raise CompletionError(f"mock backend {self.model_id!r} has no response for this prompt")
        return self.default


def request_key(model_id: str, decoding: Decoding, prompt: str, attempt: int = 0) -> dict:
    key = {"model": model_id, "decoding": asdict(decoding), "prompt": prompt}
    if attempt:
        key["attempt"] = attempt
    return key


def request_hash(request: Mapping) -> str:
    blob = json.dumps(request, sort_keys=True, ensure_ascii=False).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


class ResponseCache:
    """One JSON file per request hash, written atomically.

    Files hold ``{"request": ..., "response": ...}``; credentials never enter
    the request record.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.hits = 0
        self.misses = 0
        self._lock = threading.Lock()

    def path_for(self, digest: str) -> Path:
        return self.root / digest[:2] / f"{digest}.json"

    def get(self, request: Mapping) -> str | None:
        digest = request_hash(request)
        path = self.path_for(digest)
        if not path.exists():
            with self._lock:
                self.misses += 1
            return None
        try:
            entry = json.loads(path.read_text(encoding="utf-8"))
            stored, response = entry["request"], entry["response"]
        except (json.JSONDecodeError, KeyError, TypeError, UnicodeDecodeError) as exc:
            raise CacheError(f"corrupt cache entry {path}: {exc}") from None
        if request_hash(stored) != digest or not isinstance(response, str):
            raise CacheError(f"cache entry {path} does not match its request")
        with self._lock:
            self.hits += 1
        return response

    def put(self, request: Mapping, response: str) -> None:
        path = self.path_for(request_hash(request))
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = json.dumps({"request": request, "response": response}, ensure_ascii=False, sort_keys=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(payload)
            os.replace(tmp, path)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise


def complete(
    backend: CompletionBackend,
    prompt: str,
    cache: ResponseCache | None = None,
    *,
    retries: int = 2,
    backoff: float = 0.5,
    attempt: int = 0,
) -> str:
    """Cached completion with retry on transient failures.

    ``attempt`` > 0 marks a re-query: it gets its own cache entry so a
    malformed first answer is not simply replayed.
    """
    request = request_key(backend.model_id, backend.decoding, prompt, attempt)
    if cache is not None:
        hit = cache.get(request)
        if hit is not None:
            return hit
    last: TransientError | None = None
    for n in range(retries + 1):
        try:
            text = backend.generate(prompt, attempt)
            break
        except TransientError as exc:
            last = exc
            log.warning("%s: %s (try %d/%d)", backend.model_id, exc, n + 1, retries + 1)
            if n < retries:
                time.sleep(backoff * 2**n)
    else:
        assert last is not None
        raise CompletionError(f"gave up after {retries + 1} tries: {last}", last.status) from last
    if cache is not None:
        cache.put(request, text)
    return text
