"""Clients for OpenAI-compatible chat/embedding endpoints, output parsing, and offline mocks."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import httpx
import yaml

log = logging.getLogger(__name__)

MAX_ATTEMPTS = 3
MOCK_DIMS = 64


class GatewayError(RuntimeError):
    pass


class AuthError(GatewayError):
    """Credentials rejected or missing; not retried, aborts a batch."""


class TransientError(GatewayError):
    """Transport failure or retryable status that survived all attempts."""


class ExtractionParseError(ValueError):
    def __init__(self, message: str, raw: str):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class ChatEndpointConfig:
    base_url: str = "http://localhost:8000/v1"
    model_name: str = "Qwen3-8B"
    api_key_env: str | None = "OPENAI_API_KEY"
    temperature: float = 0.0
    max_output_tokens: int = 2048
    request_timeout: float = 120.0
    max_parallel: int = 4
    strip_think_blocks: bool = True
    kind: str = "openai"  # or "mock"
    script: str | None = None  # mock responses file
    cache_dir: str | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        if self.kind not in ("openai", "mock"):
            raise ValueError(f"unknown endpoint kind {self.kind!r}")


@dataclass(frozen=True)
class EmbeddingEndpointConfig:
    base_url: str = "http://localhost:8000/v1"
    model_name: str = "thenlper/gte-large-zh"
    api_key_env: str | None = "OPENAI_API_KEY"
    dims: int | None = 1024
    request_timeout: float = 60.0
    max_parallel: int = 4
    kind: str = "openai"  # or "mock"
    cache_dir: str | None = None

    def __post_init__(self):
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        if self.kind not in ("openai", "mock"):
            raise ValueError(f"unknown endpoint kind {self.kind!r}")


def load_endpoint_config(path: str | Path, section: str):
    """Read the ``chat`` or ``embedding`` section of a YAML endpoint file."""
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    body = data.get(section, data if section not in data and "base_url" in data else None)
    if not isinstance(body, dict):
        raise ValueError(f"{path}: no {section!r} section")
    cls = ChatEndpointConfig if section == "chat" else EmbeddingEndpointConfig
    unknown = set(body) - set(cls.__dataclass_fields__)
    if unknown:
        raise ValueError(f"{path}: unknown {section} keys: {sorted(unknown)}")
    return cls(**body)


@dataclass(frozen=True)
class RawModelResponse:
    text: str
    usage: dict = field(default_factory=dict)
    latency_ms: float = 0.0


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    @property
    def dims(self) -> int:
        return len(self.values)

    def norm(self) -> float:
        return math.sqrt(sum(v * v for v in self.values))


# --- concurrency bound ------------------------------------------------------

_SEM_LOCK = threading.Lock()
_SEMAPHORES: dict[tuple[str, str], threading.BoundedSemaphore] = {}


def endpoint_semaphore(base_url: str, model: str, limit: int) -> threading.BoundedSemaphore:
    """Process-wide in-flight bound shared by every client of one endpoint."""
    with _SEM_LOCK:
        key = (base_url.rstrip("/"), model)
        if key not in _SEMAPHORES:
            _SEMAPHORES[key] = threading.BoundedSemaphore(limit)
        return _SEMAPHORES[key]


def _api_key(env_name: str | None) -> str | None:
    if not env_name:
        return None
    key = os.environ.get(env_name)
    if not key:
        raise AuthError(f"environment variable {env_name} is not set")
    return key


def _content_key(*parts) -> str:
    blob = json.dumps(parts, ensure_ascii=False, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class JsonCache:
    """Thread-safe key/value cache, optionally persisted one file per key."""

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory else None
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)
        self._mem: dict[str, object] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, key: str):
        with self._lock:
            if key in self._mem:
                self.hits += 1
                return self._mem[key]
        if self.directory:
            path = self.directory / f"{key}.json"
            if path.exists():
                value = json.loads(path.read_text(encoding="utf-8"))
                with self._lock:
                    self._mem[key] = value
                    self.hits += 1
                return value
        with self._lock:
            self.misses += 1
        return None

    def put(self, key: str, value) -> None:
        with self._lock:
            self._mem[key] = value
        if self.directory:
            path = self.directory / f"{key}.json"
            tmp = path.with_suffix(f".{threading.get_ident()}.tmp")
            tmp.write_text(json.dumps(value, ensure_ascii=False), encoding="utf-8")
            os.replace(tmp, path)


class _HttpEndpoint:
    def __init__(self, base_url, model, api_key_env, timeout, max_parallel,
                 transport: httpx.BaseTransport | None, sleep: Callable[[float], None]):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self._sem = endpoint_semaphore(base_url, model, max_parallel)
        self._client = httpx.Client(timeout=timeout, transport=transport)
        self._sleep = sleep

    def _post(self, path: str, body: dict) -> dict:
        headers = {"Content-Type": "application/json"}
        key = _api_key(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        url = f"{self.base_url}/{path}"
        last: Exception | None = None
        for attempt in range(MAX_ATTEMPTS):
            if attempt:
                self._sleep(0.5 * 2 ** (attempt - 1))
            try:
                with self._sem:
                    resp = self._client.post(url, json=body, headers=headers)
            except httpx.TransportError as exc:
                last = exc
                log.warning("%s attempt %d/%d failed: %s", url, attempt + 1, MAX_ATTEMPTS, exc)
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"{url}: authentication failed ({resp.status_code})")
            if resp.status_code == 429 or resp.status_code >= 500:
                last = GatewayError(f"{url}: HTTP {resp.status_code}")
                log.warning("%s attempt %d/%d got HTTP %d", url, attempt + 1, MAX_ATTEMPTS, resp.status_code)
                continue
            if resp.status_code >= 400:
                raise GatewayError(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}")
            try:
                return resp.json()
            except ValueError as exc:
                raise GatewayError(f"{url}: response is not JSON") from exc
        raise TransientError(f"{url}: failed after {MAX_ATTEMPTS} attempts: {last}")

    def close(self):
        self._client.close()


class ChatClient:
    """OpenAI-compatible chat completions, one completion per call."""

    def __init__(self, cfg: ChatEndpointConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.cfg = cfg
        self._http = _HttpEndpoint(cfg.base_url, cfg.model_name, cfg.api_key_env, cfg.request_timeout,
                                   cfg.max_parallel, transport, sleep)
        self.cache = JsonCache(cfg.cache_dir) if cfg.cache_dir else None

    def complete(self, prompt: str) -> RawModelResponse:
        cfg = self.cfg
        key = _content_key(cfg.base_url, cfg.model_name, cfg.temperature, cfg.max_output_tokens, prompt)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return RawModelResponse(hit["text"], hit.get("usage", {}), 0.0)
        body = {
            "model": cfg.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_output_tokens,
            "stream": False,
        }
        start = time.perf_counter()
        data = self._http._post("chat/completions", body)
        latency = (time.perf_counter() - start) * 1000
        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed chat response: {str(data)[:200]}") from exc
        usage = data.get("usage") or {}
        usage = {k: usage[k] for k in ("prompt_tokens", "completion_tokens") if k in usage}
        if self.cache is not None:
            self.cache.put(key, {"text": text, "usage": usage})
        return RawModelResponse(text, usage, latency)

    def close(self):
        self._http.close()


class ScriptedChatBackend:
    """Offline chat stand-in replaying canned responses.

    Each rule is ``{"match": substring, "response": text}``; the first rule
    whose substring occurs in the prompt answers. ``default`` answers the rest.
    """

    def __init__(self, rules: Sequence[dict], default: str = "", max_parallel: int = 4):
        self.rules = [(r["match"], r["response"]) for r in rules]
        self.default = default
        self.calls = 0
        self._lock = threading.Lock()
        self._sem = threading.BoundedSemaphore(max_parallel)
        self.cfg = ChatEndpointConfig(kind="mock", max_parallel=max_parallel, api_key_env=None)

    @classmethod
    def from_file(cls, path: str | Path, max_parallel: int = 4) -> "ScriptedChatBackend":
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        return cls(data.get("rules", []), data.get("default", ""), max_parallel)

    def complete(self, prompt: str) -> RawModelResponse:
        with self._sem:
            with self._lock:
                self.calls += 1
            for needle, response in self.rules:
                if needle in prompt:
                    return RawModelResponse(response, {}, 0.0)
            return RawModelResponse(self.default, {}, 0.0)

    def close(self):
        pass


def make_chat_client(cfg: ChatEndpointConfig, **kwargs):
    if cfg.kind == "mock":
        if not cfg.script:
            raise ValueError("mock chat endpoint needs a 'script' file")
        return ScriptedChatBackend.from_file(cfg.script, cfg.max_parallel)
    return ChatClient(cfg, **kwargs)


@dataclass
class BatchItem:
    index: int
    response: RawModelResponse | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.response is not None


def extract_batch(prompts: Sequence[str], client, max_parallel: int | None = None) -> list[BatchItem]:
    """Run every prompt; one slot per prompt, failures recorded in place.

    An AuthError aborts the batch.
    """
    workers = max_parallel or client.cfg.max_parallel

    def run(i: int) -> BatchItem:
        try:
            return BatchItem(i, client.complete(prompts[i]))
        except AuthError:
            raise
        except GatewayError as exc:
            return BatchItem(i, error=str(exc))

    if not prompts:
        return []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, range(len(prompts))))


# --- output parsing ---------------------------------------------------------

_THINK = re.compile(r"<think>.*?</think>", re.S)
_FENCE = re.compile(r"```[A-Za-z0-9_-]*[ \t]*\n?")


def _first_object(text: str) -> str | None:
    start = text.find("{")
    while start != -1:
        depth, in_str, esc = 0, False, False
        for i in range(start, len(text)):
            ch = text[i]
            if in_str:
                if esc:
                    esc = False
                elif ch == "\\":
                    esc = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return text[start:i + 1]
        start = text.find("{", start + 1)
    return None


def _drop_trailing_commas(text: str) -> str:
    out, in_str, esc = [], False, False
    i = 0
    while i < len(text):
        ch = text[i]
        if in_str:
            out.append(ch)
            if esc:
                esc = False
            elif ch == "\\":
                esc = True
            elif ch == '"':
                in_str = False
        elif ch == '"':
            in_str = True
            out.append(ch)
        elif ch == ",":
            j = i + 1
            while j < len(text) and text[j].isspace():
                j += 1
            if j < len(text) and text[j] in "}]":
                i += 1
                continue
            out.append(ch)
        else:
            out.append(ch)
        i += 1
    return "".join(out)


def parse_model_output(raw: str, strip_think: bool = True) -> str:
    """Candidate JSON text from a completion: drop reasoning spans and code
    fences, take the first balanced object, remove trailing commas once.
    """
    text = raw
    if strip_think:
        text = _THINK.sub("", text)
        if "</think>" in text:  # opening tag swallowed by the server
            text = text.split("</think>", 1)[1]
    text = _FENCE.sub("", text)
    obj = _first_object(text)
    if obj is None:
        raise ExtractionParseError("no balanced JSON object in model output", raw)
    return _drop_trailing_commas(obj)


# --- embeddings ---------------------------------------------------------------


def _bucket(token: str, dims: int) -> int:
    return int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "big") % dims


def bigram_counts(text: str) -> dict[str, int]:
    grams = [text[i:i + 2] for i in range(len(text) - 1)] or ([text] if text else [])
    counts: dict[str, int] = {}
    for g in grams:
        counts[g] = counts.get(g, 0) + 1
    return counts


def mock_embed(text: str, dims: int = MOCK_DIMS) -> EmbeddingVector:
    """Hashed character-bigram counts, L2-normalized. A one-character text uses
    the character itself as its only token; empty text gives the zero vector.
    """
    vec = [0.0] * dims
    for gram, count in bigram_counts(text).items():
        vec[_bucket(gram, dims)] += count
    norm = math.sqrt(sum(v * v for v in vec))
    if norm:
        vec = [v / norm for v in vec]
    return EmbeddingVector(tuple(vec))


class MockEmbedder:
    provider = "mock"

    def __init__(self, dims: int = MOCK_DIMS):
        self.dims = dims
        self.calls = 0

    def __call__(self, text: str) -> EmbeddingVector:
        self.calls += 1
        return mock_embed(text, self.dims)


class EmbeddingClient:
    """OpenAI-compatible ``/embeddings`` client with a content-hash cache."""

    def __init__(self, cfg: EmbeddingEndpointConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep, cache: JsonCache | None = None):
        self.cfg = cfg
        self._http = _HttpEndpoint(cfg.base_url, cfg.model_name, cfg.api_key_env, cfg.request_timeout,
                                   cfg.max_parallel, transport, sleep)
        self.cache = cache if cache is not None else JsonCache(cfg.cache_dir)
        self.network_calls = 0

    def __call__(self, text: str) -> EmbeddingVector:
        return self.embed(text)

    def embed(self, text: str) -> EmbeddingVector:
        if not text.strip():
            raise ValueError("embed() needs non-empty text")
        key = _content_key(self.cfg.base_url, self.cfg.model_name, text)
        hit = self.cache.get(key)
        if hit is not None:
            return EmbeddingVector(tuple(hit))
        self.network_calls += 1
        data = self._http._post("embeddings", {"model": self.cfg.model_name, "input": text})
        try:
            values = [float(v) for v in data["data"][0]["embedding"]]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise GatewayError(f"malformed embedding response: {str(data)[:200]}") from exc
        if self.cfg.dims is not None and len(values) != self.cfg.dims:
            raise GatewayError(f"expected {self.cfg.dims}-dim embedding, got {len(values)}")
        self.cache.put(key, values)
        return EmbeddingVector(tuple(values))

    def close(self):
        self._http.close()


class CachedEmbedder:
    """Content-hash cache in front of any embedder callable."""

    def __init__(self, inner, cache: JsonCache | None = None, provider: str = "mock", model: str = "bigram64"):
        self.inner = inner
        self.cache = cache or JsonCache()
        self.provider, self.model = provider, model

    def __call__(self, text: str) -> EmbeddingVector:
        key = _content_key(self.provider, self.model, text)
        hit = self.cache.get(key)
        if hit is not None:
            return EmbeddingVector(tuple(hit))
        vec = self.inner(text)
        self.cache.put(key, list(vec.values))
        return vec


def make_embedder(cfg: EmbeddingEndpointConfig | None, **kwargs):
    if cfg is None or cfg.kind == "mock":
        cache = JsonCache(cfg.cache_dir) if cfg is not None and cfg.cache_dir else None
        return CachedEmbedder(MockEmbedder(), cache)
    return EmbeddingClient(cfg, **kwargs)


def config_dict(cfg) -> dict:
    return asdict(cfg)
