"""Embedding providers: a remote HTTP client and a deterministic local fallback.

The fallback hashes character trigrams into a fixed-dimension frequency
vector and L2-normalizes it, so the whole pipeline (including golden
benchmarks) runs offline and reproducibly. Dimensions are configurable;
1536 matches ada2-class models, 3584 Qwen2-class models.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from typing import Callable, Optional, Sequence

import numpy as np
import requests

from .errors import DimensionMismatchError, ProviderUnavailableError

MODE_REMOTE = "remote_http"
MODE_FALLBACK = "local_hash_fallback"


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in float64; zero vectors yield 0.0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """L2-normalize rows; zero rows stay zero."""
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return matrix / norms


class EmbeddingProvider:
    """Interface: deterministic text -> fixed-dimension float vector."""

    provider_id: str
    dimension: int
    mode: str

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        raise NotImplementedError

    def embed_one(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]


class HashedTrigramEmbedder(EmbeddingProvider):
    """Offline fallback embedder.

    Vector construction: lower-case the text, collapse whitespace runs,
    take all character trigrams (the whole string when shorter than 3),
    hash each trigram with keyed blake2b into an index, count, and
    L2-normalize. Identical text always yields the identical vector for a
    given (dimension, seed).
    """

    mode = MODE_FALLBACK

    def __init__(self, provider_id: str = "hash-trigram", dimension: int = 256, seed: int = 0):
        if dimension < 1:
            raise ValueError("dimension must be positive")
        self.provider_id = provider_id
        self.dimension = dimension
        self.seed = seed
        self._key = seed.to_bytes(8, "little", signed=False)
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def _bucket(self, gram: str) -> int:
        digest = hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=self._key).digest()
        return int.from_bytes(digest, "little") % self.dimension

    def _embed(self, text: str) -> np.ndarray:
        s = " ".join(text.lower().split())
        vec = np.zeros(self.dimension, dtype=np.float32)
        grams = [s[i : i + 3] for i in range(len(s) - 2)] if len(s) >= 3 else ([s] if s else [])
        for gram in grams:
            vec[self._bucket(gram)] += 1.0
        norm = float(np.linalg.norm(vec))
        if norm > 0.0:
            vec /= norm
        return vec

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        if len(texts) == 0:
            raise ValueError("texts must be non-empty")
        rows = []
        for text in texts:
            with self._lock:
                cached = self._cache.get(text)
            if cached is None:
                cached = self._embed(text)
                with self._lock:
                    self._cache[text] = cached
            rows.append(cached)
        return np.stack(rows)


class HttpEmbeddingProvider(EmbeddingProvider):
    """Client for an embeddings endpoint speaking the common JSON shape.

    POST {"model": provider_id, "input": [...]} and expect
    {"data": [{"embedding": [...]}, ...]} in input order. Transient HTTP
    failures are retried with exponential backoff (base 1s, factor 2).
    """

    mode = MODE_REMOTE

    def __init__(
        self,
        provider_id: str,
        dimension: int,
        endpoint: str,
        api_key: str = "",
        timeout: float = 30.0,
        retries: int = 3,
        max_in_flight: int = 4,
        transport: Optional[Callable] = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.provider_id = provider_id
        self.dimension = dimension
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout = timeout
        self.retries = retries
        self._in_flight = threading.Semaphore(max_in_flight)
        self._transport = transport or self._http_post
        self._sleep = sleep

    def _http_post(self, url: str, body: dict, headers: dict, timeout: float):
        resp = requests.post(url, json=body, headers=headers, timeout=timeout)
        try:
            payload = resp.json()
        except json.JSONDecodeError:
            payload = {}
        return resp.status_code, payload

    def embed_batch(self, texts: Sequence[str]) -> np.ndarray:
        if len(texts) == 0:
            raise ValueError("texts must be non-empty")
        body = {"model": self.provider_id, "input": list(texts)}
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error = "no attempt made"
        with self._in_flight:
            for attempt in range(self.retries + 1):
                try:
                    status, payload = self._transport(self.endpoint, body, headers, self.timeout)
                except Exception as exc:  # connection-level failure counts as transient
                    status, payload = None, None
                    last_error = f"transport error: {exc}"
                if status == 200 and payload is not None:
                    return self._extract(payload, len(texts))
                if status is not None:
                    last_error = f"HTTP {status}"
                    if status not in (429,) and status < 500:
                        break
                if attempt < self.retries:
                    self._sleep(1.0 * (2**attempt))
        raise ProviderUnavailableError(
            f"embedding provider {self.provider_id} unavailable ({last_error})"
        )

    def _extract(self, payload: dict, expected_rows: int) -> np.ndarray:
        data = payload.get("data")
        if not isinstance(data, list) or len(data) != expected_rows:
            raise ProviderUnavailableError(
                f"embedding provider {self.provider_id} returned a malformed payload"
            )
        rows = []
        for item in data:
            vector = item.get("embedding")
            if not isinstance(vector, list) or len(vector) != self.dimension:
                got = len(vector) if isinstance(vector, list) else "none"
                raise DimensionMismatchError(
                    f"provider {self.provider_id} declared dim {self.dimension}, returned {got}"
                )
            rows.append(np.asarray(vector, dtype=np.float32))
        return np.stack(rows)


def embed_batch(texts: Sequence[str], provider: EmbeddingProvider) -> list[np.ndarray]:
    """Embed texts, enforcing the provider's declared dimension."""
    matrix = provider.embed_batch(texts)
    if matrix.shape != (len(texts), provider.dimension):
        raise DimensionMismatchError(
            f"provider {provider.provider_id} produced shape {matrix.shape}, "
            f"expected ({len(texts)}, {provider.dimension})"
        )
    return [matrix[i] for i in range(matrix.shape[0])]
