"""Local hybrid index: exact-cosine dense search plus a BM25 inverted index.

All three structures (dense vectors, keyword postings, chunk table) are
kept in lockstep; an upsert replaces a chunk everywhere or not at all.
Dense search is an exact scan, sized for corpora in the 1e4-1e5 chunk
range. The store persists as an inspectable directory: a JSON Lines chunk
table, a raw float32 embedding matrix with a small binary header, and a
BM25 stats file.
"""

from __future__ import annotations

import json
import math
import re
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .corpus import Chunk
from .embeddings import EmbeddingProvider
from .errors import DimensionMismatchError, EmptyStoreError, UnknownChunkError

STORE_MAGIC = b"RAGDEP01"
BM25_K1 = 1.2
BM25_B = 0.75

_SUBTERM_RE = re.compile(r"[^0-9a-z]+")


def expand_term(term: str) -> set[str]:
    """Lower-case a term and add its sub-tokens.

    Identifiers split on ".", "_", "-" (and any other non-alphanumeric
    boundary) into sub-terms; the whole lowered term is always kept, so
    "server.port" indexes as {"server.port", "server", "port"}.
    """
    lowered = term.lower()
    parts = {p for p in _SUBTERM_RE.split(lowered) if p}
    parts.add(lowered)
    return parts


def text_terms(text: str) -> tuple[list[str], int]:
    """Expanded index terms of a text plus its whitespace-token length."""
    tokens = text.lower().split()
    terms: list[str] = []
    for token in tokens:
        terms.extend(expand_term(token))
    return terms, len(tokens)


@dataclass(frozen=True)
class UpsertStats:
    inserted: int = 0
    replaced: int = 0


class HybridStore:
    """Chunk table + dense vectors + BM25 postings, updated atomically."""

    def __init__(self, provider: EmbeddingProvider, k1: float = BM25_K1, b: float = BM25_B):
        self.provider = provider
        self.k1 = k1
        self.b = b
        self._chunks: dict[str, Chunk] = {}
        self._postings: dict[str, dict[str, int]] = {}
        self._doc_len: dict[str, int] = {}
        self._write_lock = threading.Lock()
        self._matrix_cache: Optional[tuple[list[str], np.ndarray]] = None

    # -- introspection

    def __len__(self) -> int:
        return len(self._chunks)

    def chunk_ids(self) -> list[str]:
        return sorted(self._chunks)

    def get_chunk(self, chunk_id: str) -> Chunk:
        try:
            return self._chunks[chunk_id]
        except KeyError:
            raise UnknownChunkError(f"unknown chunk: {chunk_id}") from None

    def has_chunk(self, chunk_id: str) -> bool:
        return chunk_id in self._chunks

    def chunk_ids_tagged(self, candidate_id: str) -> list[str]:
        return sorted(
            cid
            for cid, chunk in self._chunks.items()
            if chunk.metadata.get("candidate_id") == candidate_id
        )

    @property
    def doc_count(self) -> int:
        return len(self._chunks)

    @property
    def avg_doc_len(self) -> float:
        if not self._doc_len:
            return 0.0
        return sum(self._doc_len.values()) / len(self._doc_len)

    def document_frequency(self, term: str) -> int:
        return len(self._postings.get(term.lower(), {}))

    # -- writes

    def upsert_chunks(self, chunks: Sequence[Chunk]) -> UpsertStats:
        """Insert or replace chunks as one atomic batch.

        Every chunk must carry an embedding of the provider's dimension;
        a bad batch leaves the store untouched.
        """
        for chunk in chunks:
            if chunk.embedding is None or len(chunk.embedding) != self.provider.dimension:
                got = "none" if chunk.embedding is None else str(len(chunk.embedding))
                raise DimensionMismatchError(
                    f"chunk {chunk.chunk_id}: embedding length {got} != {self.provider.dimension}"
                )
        with self._write_lock:
            inserted = replaced = 0
            for chunk in chunks:
                if chunk.chunk_id in self._chunks:
                    self._remove_postings(chunk.chunk_id)
                    replaced += 1
                else:
                    inserted += 1
                self._chunks[chunk.chunk_id] = chunk
                self._add_postings(chunk)
            self._matrix_cache = None
            return UpsertStats(inserted=inserted, replaced=replaced)

    def remove_chunks(self, chunk_ids: Iterable[str]) -> int:
        """Drop chunks (e.g. to purge per-candidate dynamic context)."""
        with self._write_lock:
            removed = 0
            for chunk_id in list(chunk_ids):
                if chunk_id in self._chunks:
                    self._remove_postings(chunk_id)
                    del self._chunks[chunk_id]
                    removed += 1
            self._matrix_cache = None
            return removed

    def _add_postings(self, chunk: Chunk) -> None:
        terms, length = text_terms(chunk.text)
        self._doc_len[chunk.chunk_id] = length
        for term in terms:
            bucket = self._postings.setdefault(term, {})
            bucket[chunk.chunk_id] = bucket.get(chunk.chunk_id, 0) + 1

    def _remove_postings(self, chunk_id: str) -> None:
        self._doc_len.pop(chunk_id, None)
        empty = []
        for term, bucket in self._postings.items():
            if chunk_id in bucket:
                del bucket[chunk_id]
                if not bucket:
                    empty.append(term)
        for term in empty:
            del self._postings[term]

    # -- sparse scoring

    def _idf(self, term: str) -> float:
        df = self.document_frequency(term)
        if df == 0:
            return 0.0
        n = self.doc_count
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def bm25_score(self, query_terms: Sequence[str], chunk_id: str) -> float:
        """Okapi BM25 of a chunk for the query terms.

        Query terms go through the same lower-case + sub-term expansion as
        indexing; duplicate expanded terms are scored once.
        """
        if chunk_id not in self._chunks:
            raise UnknownChunkError(f"unknown chunk: {chunk_id}")
        expanded: set[str] = set()
        for term in query_terms:
            expanded |= expand_term(term)
        dl = self._doc_len[chunk_id]
        avgdl = self.avg_doc_len
        score = 0.0
        for term in sorted(expanded):
            tf = self._postings.get(term, {}).get(chunk_id, 0)
            if tf == 0:
                continue
            idf = self._idf(term)
            score += idf * (tf * (self.k1 + 1)) / (tf + self.k1 * (1 - self.b + self.b * dl / avgdl))
        return score

    def sparse_search(self, query_terms: Sequence[str], k: int) -> list[tuple[str, float]]:
        """Top-k chunks by BM25, keyword matches only (score > 0)."""
        if not self._chunks:
            raise EmptyStoreError("sparse search on empty store")
        expanded: set[str] = set()
        for term in query_terms:
            expanded |= expand_term(term)
        matched: set[str] = set()
        for term in expanded:
            matched |= set(self._postings.get(term, {}))
        scored = [(cid, self.bm25_score(query_terms, cid)) for cid in matched]
        scored = [(cid, s) for cid, s in scored if s > 0.0]
        scored.sort(key=lambda item: (-item[1], item[0]))
        return scored[:k]

    # -- dense scoring

    def _matrix(self) -> tuple[list[str], np.ndarray]:
        cached = self._matrix_cache
        if cached is None:
            ids = sorted(self._chunks)
            matrix = (
                np.stack([self._chunks[cid].embedding for cid in ids]).astype(np.float64)
                if ids
                else np.zeros((0, self.provider.dimension))
            )
            cached = (ids, matrix)
            self._matrix_cache = cached
        return cached

    def dense_search(self, query_vector: np.ndarray, k: int) -> list[tuple[str, float]]:
        """Top-k chunks by cosine similarity (exact float64 scan)."""
        if not self._chunks:
            raise EmptyStoreError("dense search on empty store")
        ids, matrix = self._matrix()
        query_vector = np.asarray(query_vector, dtype=np.float64)
        norms = np.linalg.norm(matrix, axis=1)
        qnorm = float(np.linalg.norm(query_vector))
        if qnorm == 0.0:
            scores = np.zeros(len(ids))
        else:
            denom = norms * qnorm
            denom[denom == 0.0] = 1.0
            scores = (matrix @ query_vector) / denom
        order = sorted(range(len(ids)), key=lambda i: (-float(scores[i]), ids[i]))
        return [(ids[i], float(scores[i])) for i in order[:k]]


# --- persistence -------------------------------------------------------------


def save_store(store: HybridStore, directory: Path) -> None:
    """Write the store as chunks.jsonl + embeddings.bin + bm25.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ids = store.chunk_ids()
    with open(directory / "chunks.jsonl", "w", encoding="utf-8") as fh:
        for cid in ids:
            chunk = store.get_chunk(cid)
            fh.write(
                json.dumps(
                    {
                        "chunk_id": chunk.chunk_id,
                        "doc_id": chunk.doc_id,
                        "window_index": chunk.window_index,
                        "token_span": list(chunk.token_span),
                        "text": chunk.text,
                        "metadata": chunk.metadata,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    with open(directory / "embeddings.bin", "wb") as fh:
        fh.write(STORE_MAGIC)
        fh.write(struct.pack("<I", store.provider.dimension))
        fh.write(struct.pack("<Q", len(ids)))
        for cid in ids:
            fh.write(np.asarray(store.get_chunk(cid).embedding, dtype="<f4").tobytes())
    stats = {
        "k1": store.k1,
        "b": store.b,
        "doc_count": store.doc_count,
        "avg_doc_len": store.avg_doc_len,
        "doc_len": {cid: store._doc_len[cid] for cid in ids},
        "df": {term: len(bucket) for term, bucket in sorted(store._postings.items())},
    }
    (directory / "bm25.json").write_text(json.dumps(stats, sort_keys=True), encoding="utf-8")


def load_store(directory: Path, provider: EmbeddingProvider) -> HybridStore:
    """Rebuild a store from disk, verifying header and BM25 stats."""
    directory = Path(directory)
    emb_path = directory / "embeddings.bin"
    raw = emb_path.read_bytes()
    if raw[:8] != STORE_MAGIC:
        raise ValueError(f"{emb_path} is not a ragdep embedding file")
    dimension = struct.unpack("<I", raw[8:12])[0]
    count = struct.unpack("<Q", raw[12:20])[0]
    if dimension != provider.dimension:
        raise DimensionMismatchError(
            f"store dimension {dimension} != provider dimension {provider.dimension}"
        )
    matrix = np.frombuffer(raw[20:], dtype="<f4").reshape(count, dimension)
    stats = json.loads((directory / "bm25.json").read_text(encoding="utf-8"))
    store = HybridStore(provider, k1=stats.get("k1", BM25_K1), b=stats.get("b", BM25_B))
    chunks = []
    with open(directory / "chunks.jsonl", encoding="utf-8") as fh:
        for i, line in enumerate(fh):
            record = json.loads(line)
            chunks.append(
                Chunk(
                    chunk_id=record["chunk_id"],
                    doc_id=record["doc_id"],
                    window_index=record["window_index"],
                    token_span=tuple(record["token_span"]),
                    text=record["text"],
                    embedding=np.array(matrix[i], dtype=np.float32),
                    metadata=record["metadata"],
                )
            )
    if len(chunks) != count:
        raise ValueError(f"chunk table has {len(chunks)} rows, header says {count}")
    store.upsert_chunks(chunks)
    expected_df = stats.get("df", {})
    actual_df = {term: len(bucket) for term, bucket in store._postings.items()}
    if expected_df != actual_df:
        raise ValueError(f"BM25 stats in {directory} disagree with the chunk table")
    return store
