"""Uniform chat-completion access: remote HTTP endpoints and an offline mock.

One wire schema (the widely adopted chat-completions JSON shape) covers
proprietary endpoints and local model servers alike. Decoding is pinned
to temperature 0 and asserted on every outgoing request body. Responses
are cached by (model_id, prompt hash) and every call lands in an
append-only JSON Lines run log.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import requests

from .confignet import normalize_value
from .errors import ContextTooLongError, MalformedPromptError, ProviderUnavailableError

# Declared context windows (whitespace-token estimate) per known model.
CONTEXT_LENGTHS = {
    "gpt-4o-2024-05-13": 128 * 1024,
    "gpt-3.5-turbo-0125": 16 * 1024,
    "llama3:70b": 8 * 1024,
    "llama3:8b": 8 * 1024,
}

MOCK_ENDPOINT_PREFIX = "mock://"


def prompt_sha256(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def estimate_tokens(text: str) -> int:
    return len(text.split())


@dataclass(frozen=True)
class ModelConfig:
    """Decoding settings for one model; temperature is pinned to 0."""

    model_id: str
    endpoint: str
    api_key_env: str = ""
    temperature: float = 0.0
    max_tokens: int = 1024
    timeout: float = 60.0
    retries: int = 3

    def __post_init__(self):
        if self.temperature != 0.0:
            raise ValueError("experiment runs require temperature 0.0")

    @property
    def is_mock(self) -> bool:
        return self.endpoint.startswith(MOCK_ENDPOINT_PREFIX) or self.endpoint == "mock"


@dataclass(frozen=True)
class CompletionResult:
    text: str
    usage: dict
    latency_ms: float
    retries: int = 0
    cached: bool = False


_BLOCK_RE = re.compile(r"\[DEPENDENCY\](.*?)\[/DEPENDENCY\]", re.DOTALL)


class MockModel:
    """Deterministic stand-in model driven by the prompt's dependency block.

    The rule is intentionally imperfect: a pair counts as a dependency when
    the normalized values are equal and either the option names share a
    lower-cased sub-token or one name is exactly "EXPOSE" while the other
    mentions a port. That yields all four confusion cells on realistic
    data while staying fully reproducible offline.
    """

    def complete(self, prompt: str) -> str:
        block = _BLOCK_RE.search(prompt)
        if not block:
            raise MalformedPromptError("prompt lacks a [DEPENDENCY] block")
        fields = {}
        for line in block.group(1).splitlines():
            if ":" in line:
                key, _, value = line.partition(":")
                fields[key.strip()] = value.strip()
        try:
            name_a, value_a = fields["name_a"], fields["value_a"]
            name_b, value_b = fields["name_b"], fields["value_b"]
        except KeyError as exc:
            raise MalformedPromptError(f"dependency block is missing {exc}") from exc
        values_equal = normalize_value(value_a, name_a) == normalize_value(value_b, name_b)
        shared = self._sub_tokens(name_a) & self._sub_tokens(name_b)
        expose_rule = (name_a == "EXPOSE" and "port" in name_b.lower()) or (
            name_b == "EXPOSE" and "port" in name_a.lower()
        )
        is_dependency = values_equal and (bool(shared) or expose_rule)
        plan = (
            f"Compare the values of {name_a} and {name_b}, then check whether "
            "both options configure the same underlying setting."
        )
        if is_dependency:
            rationale = (
                f"The options {name_a} and {name_b} carry equal values and their "
                "names point at the same setting, so changing one requires "
                "changing the other."
            )
        else:
            rationale = (
                f"The options {name_a} and {name_b} do not clearly refer to the "
                "same setting; the equal values look coincidental."
            )
        return json.dumps(
            {
                "plan": plan,
                "rationale": rationale,
                "uncertainty": 10 if is_dependency else 9,
                "isDependency": is_dependency,
            }
        )

    @staticmethod
    def _sub_tokens(name: str) -> set[str]:
        return {t for t in re.split(r"[^0-9a-z]+", name.lower()) if t}


_DEFAULT_MOCK = MockModel()


def mock_complete(prompt: str) -> str:
    """Run the default deterministic mock model on a prompt."""
    return _DEFAULT_MOCK.complete(prompt)


@dataclass
class RunLogEntry:
    timestamp: float
    model_id: str
    prompt_sha256: str
    latency_ms: float
    http_status: str
    retries: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "timestamp": self.timestamp,
                "model_id": self.model_id,
                "prompt_sha256": self.prompt_sha256,
                "latency_ms": self.latency_ms,
                "http_status": self.http_status,
                "retries": self.retries,
            },
            sort_keys=True,
        )


class ModelGateway:
    """Thread-safe completion client with retries, caching, and a run log."""

    def __init__(
        self,
        run_log_path: Optional[Path] = None,
        cache_enabled: bool = True,
        cache_dir: Optional[Path] = None,
        max_in_flight: int = 4,
        transport: Optional[Callable] = None,
        sleep: Callable[[float], None] = time.sleep,
        mock: Optional[MockModel] = None,
    ):
        self.run_log_path = Path(run_log_path) if run_log_path else None
        self.cache_enabled = cache_enabled
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self._cache: dict[tuple[str, str], str] = {}
        self._cache_lock = threading.Lock()
        self._log_lock = threading.Lock()
        self._in_flight = threading.Semaphore(max_in_flight)
        self._transport = transport or self._http_post
        self._sleep = sleep
        self._mock = mock or _DEFAULT_MOCK
        self.entries: list[RunLogEntry] = []

    # -- public API

    def complete(self, prompt: str, cfg: ModelConfig) -> CompletionResult:
        """Get a completion, checking context length before any network call."""
        digest = prompt_sha256(prompt)
        limit = CONTEXT_LENGTHS.get(cfg.model_id)
        if limit is not None and estimate_tokens(prompt) > limit:
            raise ContextTooLongError(
                f"prompt of ~{estimate_tokens(prompt)} tokens exceeds the "
                f"{limit}-token context of {cfg.model_id}"
            )
        cached = self._cache_get(cfg.model_id, digest)
        if cached is not None:
            self._log(cfg.model_id, digest, 0.0, "cache", 0)
            return CompletionResult(
                text=cached, usage=self._usage(prompt, cached), latency_ms=0.0, cached=True
            )
        started = time.perf_counter()
        if cfg.is_mock:
            text = self._mock.complete(prompt)
            retries = 0
            status = "mock"
        else:
            text, retries, status = self._remote_complete(prompt, cfg, digest)
        latency_ms = (time.perf_counter() - started) * 1000.0
        self._cache_put(cfg.model_id, digest, text)
        self._log(cfg.model_id, digest, latency_ms, status, retries)
        return CompletionResult(
            text=text, usage=self._usage(prompt, text), latency_ms=latency_ms, retries=retries
        )

    # -- remote path

    def _remote_complete(self, prompt: str, cfg: ModelConfig, digest: str) -> tuple[str, int, str]:
        body = {
            "model": cfg.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": cfg.temperature,
            "max_tokens": cfg.max_tokens,
        }
        assert body["temperature"] == 0.0, "request body must pin temperature to 0"
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(cfg.api_key_env, "") if cfg.api_key_env else ""
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        last_error = "no attempt made"
        with self._in_flight:
            for attempt in range(cfg.retries + 1):
                try:
                    status, payload = self._transport(cfg.endpoint, body, headers, cfg.timeout)
                except Exception as exc:
                    status, payload = None, None
                    last_error = f"transport error: {exc}"
                if status == 200 and isinstance(payload, dict):
                    try:
                        text = payload["choices"][0]["message"]["content"]
                    except (KeyError, IndexError, TypeError):
                        raise ProviderUnavailableError(
                            f"{cfg.model_id} returned a malformed completion payload"
                        ) from None
                    return text, attempt, "200"
                if status is not None:
                    last_error = f"HTTP {status}"
                    if status != 429 and status < 500:
                        break
                if attempt < cfg.retries:
                    self._sleep(1.0 * (2**attempt))
        self._log(cfg.model_id, digest, 0.0, last_error, cfg.retries)
        raise ProviderUnavailableError(f"{cfg.model_id} unavailable ({last_error})")

    def _http_post(self, url: str, body: dict, headers: dict, timeout: float):
        resp = requests.post(url, json=body, headers=headers, timeout=timeout)
        try:
            payload = resp.json()
        except json.JSONDecodeError:
            payload = {}
        return resp.status_code, payload

    # -- cache and log plumbing

    @staticmethod
    def _usage(prompt: str, completion: str) -> dict:
        p, c = estimate_tokens(prompt), estimate_tokens(completion)
        return {"prompt_tokens": p, "completion_tokens": c, "total_tokens": p + c}

    def _cache_path(self, model_id: str, digest: str) -> Path:
        safe_model = re.sub(r"[^0-9A-Za-z._-]+", "_", model_id)
        return self.cache_dir / safe_model / f"{digest}.json"

    def _cache_get(self, model_id: str, digest: str) -> Optional[str]:
        if not self.cache_enabled:
            return None
        with self._cache_lock:
            hit = self._cache.get((model_id, digest))
        if hit is not None:
            return hit
        if self.cache_dir is not None:
            path = self._cache_path(model_id, digest)
            if path.is_file():
                text = json.loads(path.read_text(encoding="utf-8"))["text"]
                with self._cache_lock:
                    self._cache[(model_id, digest)] = text
                return text
        return None

    def _cache_put(self, model_id: str, digest: str, text: str) -> None:
        if not self.cache_enabled:
            return
        with self._cache_lock:
            self._cache[(model_id, digest)] = text
        if self.cache_dir is not None:
            path = self._cache_path(model_id, digest)
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps({"text": text}), encoding="utf-8")

    def _log(self, model_id: str, digest: str, latency_ms: float, status: str, retries: int) -> None:
        entry = RunLogEntry(
            timestamp=time.time(),
            model_id=model_id,
            prompt_sha256=digest,
            latency_ms=latency_ms,
            http_status=status,
            retries=retries,
        )
        with self._log_lock:
            self.entries.append(entry)
            if self.run_log_path is not None:
                self.run_log_path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.run_log_path, "a", encoding="utf-8") as fh:
                    fh.write(entry.to_json() + "\n")
