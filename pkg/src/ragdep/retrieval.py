"""Candidate-driven retrieval: query building, hybrid search, re-ranking.

The retrieval path is deterministic end to end: Reciprocal Rank Fusion
needs no score normalization, every ordering breaks ties by chunk id, and
the fixture-backed web search client makes dynamic ingestion reproducible
offline.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .confignet import DependencyCandidate
from .corpus import Chunk, ChunkerConfig, Document, chunk_document, embed_chunks
from .embeddings import EmbeddingProvider, normalize_rows
from .errors import EmptyStoreError, ProviderUnavailableError, RewriteTwiceError, SearchUnavailableError
from .store import HybridStore, UpsertStats

logger = logging.getLogger(__name__)

RERANKER_KINDS = ("late_interaction_maxsim", "embedding_similarity", "none")

QUERY_TEMPLATE = (
    "Do {tech_a} option {name_a} (value {value_a}) and "
    "{tech_b} option {name_b} (value {value_b}) depend on each other?"
)

# Whole-token abbreviation expansions applied by template query rewriting.
ABBREVIATIONS = {
    "yml": "yaml",
    "env": "environment",
    "config": "configuration",
    "prop": "property",
    "props": "properties",
    "db": "database",
    "repo": "repository",
}


@dataclass(frozen=True)
class RetrievalQuery:
    candidate_id: str
    semantic_text: str
    keyword_terms: tuple[str, ...]
    rewritten: bool = False


@dataclass(frozen=True)
class RankedChunk:
    chunk_id: str
    dense_rank: Optional[int]
    sparse_rank: Optional[int]
    fused_score: float
    rerank_score: Optional[float] = None
    final_rank: int = 0


@dataclass(frozen=True)
class ContextSlot:
    chunk_id: str
    source_kind: str
    text: str


@dataclass(frozen=True)
class ContextSlots:
    slots: tuple[ContextSlot, ...] = ()
    top_n: int = 0

    def __len__(self) -> int:
        return len(self.slots)


@dataclass(frozen=True)
class Reranker:
    kind: str = "none"

    def __post_init__(self):
        if self.kind not in RERANKER_KINDS:
            raise ValueError(f"unknown reranker kind: {self.kind}")


@dataclass(frozen=True)
class FusionConfig:
    method: str = "rrf"
    k_rrf: int = 60
    alpha: float = 0.5  # dense weight for the weighted-sum method

    def __post_init__(self):
        if self.method not in ("rrf", "weighted"):
            raise ValueError(f"unknown fusion method: {self.method}")


def build_query(candidate: DependencyCandidate) -> RetrievalQuery:
    """Render the fixed question template and collect keyword terms."""
    a, b = candidate.option_a, candidate.option_b
    semantic_text = QUERY_TEMPLATE.format(
        tech_a=a.technology,
        name_a=a.name,
        value_a=a.raw_value,
        tech_b=b.technology,
        name_b=b.name,
        value_b=b.raw_value,
    )
    terms: list[str] = []
    for term in (a.name, b.name, a.raw_value, b.raw_value, a.technology, b.technology):
        if term and term not in terms:
            terms.append(term)
    return RetrievalQuery(
        candidate_id=candidate.id,
        semantic_text=semantic_text,
        keyword_terms=tuple(terms),
    )


def rewrite_query(
    query: RetrievalQuery,
    mode: str = "template",
    gateway=None,
    model_cfg=None,
) -> RetrievalQuery:
    """Optimize a query before search.

    Template mode expands whole-token abbreviations and appends
    "configuration dependency"; llm mode asks the model gateway for a
    rewrite and falls back to template mode when the provider is down.
    """
    if query.rewritten:
        raise RewriteTwiceError(f"query for {query.candidate_id} is already rewritten")
    if mode == "llm":
        if gateway is None or model_cfg is None:
            raise ValueError("llm rewrite mode needs a gateway and a model config")
        instruction = (
            "Rewrite the following search query to maximize retrieval of "
            "documentation about configuration options. Respond with only "
            f"the rewritten query.\n\n{query.semantic_text}"
        )
        try:
            completion = gateway.complete(instruction, model_cfg)
            text = completion.text.strip().splitlines()[0].strip()
            if text:
                return replace(query, semantic_text=text, rewritten=True)
        except ProviderUnavailableError:
            logger.warning("llm query rewrite unavailable; falling back to template mode")
        return rewrite_query(query, mode="template")
    if mode != "template":
        raise ValueError(f"unknown rewrite mode: {mode}")
    tokens = [ABBREVIATIONS.get(token.lower(), token) for token in query.semantic_text.split()]
    semantic_text = " ".join(tokens) + " configuration dependency"
    return replace(query, semantic_text=semantic_text, rewritten=True)


def _scope_allows(chunk: Chunk, scope_candidate_id: Optional[str]) -> bool:
    if scope_candidate_id is None:
        return True
    tag = chunk.metadata.get("candidate_id")
    return tag is None or tag == scope_candidate_id


def hybrid_search(
    store: HybridStore,
    query: RetrievalQuery,
    k_dense: int = 50,
    k_sparse: int = 50,
    fusion: FusionConfig = FusionConfig(),
    scope_candidate_id: Optional[str] = None,
) -> list[RankedChunk]:
    """Fuse a dense cosine leg and a sparse BM25 leg into one ranking.

    The dense leg ranks the top k_dense chunks by cosine similarity of the
    semantic text; the sparse leg ranks keyword matches (BM25 > 0) up to
    k_sparse. Fusion defaults to Reciprocal Rank Fusion with k=60. All
    orderings break ties by chunk id ascending.
    """
    if len(store) == 0:
        raise EmptyStoreError("hybrid search on empty store")
    query_vector = store.provider.embed_one(query.semantic_text)
    dense = store.dense_search(query_vector, k=len(store))
    dense = [(cid, s) for cid, s in dense if _scope_allows(store.get_chunk(cid), scope_candidate_id)]
    dense = dense[:k_dense]
    sparse = store.sparse_search(list(query.keyword_terms), k=len(store))
    sparse = [(cid, s) for cid, s in sparse if _scope_allows(store.get_chunk(cid), scope_candidate_id)]
    sparse = sparse[:k_sparse]

    dense_rank = {cid: i + 1 for i, (cid, _) in enumerate(dense)}
    sparse_rank = {cid: i + 1 for i, (cid, _) in enumerate(sparse)}
    fused: dict[str, float] = {}
    if fusion.method == "rrf":
        for ranks in (dense_rank, sparse_rank):
            for cid, rank in ranks.items():
                fused[cid] = fused.get(cid, 0.0) + 1.0 / (fusion.k_rrf + rank)
    else:
        for leg, weight in ((dense, fusion.alpha), (sparse, 1.0 - fusion.alpha)):
            if not leg:
                continue
            scores = [s for _, s in leg]
            low, high = min(scores), max(scores)
            for cid, score in leg:
                unit = 1.0 if high == low else (score - low) / (high - low)
                fused[cid] = fused.get(cid, 0.0) + weight * unit

    ordered = sorted(fused.items(), key=lambda item: (-item[1], item[0]))
    return [
        RankedChunk(
            chunk_id=cid,
            dense_rank=dense_rank.get(cid),
            sparse_rank=sparse_rank.get(cid),
            fused_score=score,
            final_rank=i + 1,
        )
        for i, (cid, score) in enumerate(ordered)
    ]


def maxsim_score(query_vectors: np.ndarray, chunk_vectors: np.ndarray) -> float:
    """Late-interaction relevance: sum over query tokens of the best cosine."""
    if query_vectors.size == 0 or chunk_vectors.size == 0:
        return 0.0
    q = normalize_rows(np.asarray(query_vectors, dtype=np.float64))
    c = normalize_rows(np.asarray(chunk_vectors, dtype=np.float64))
    return float((q @ c.T).max(axis=1).sum())


def rerank(
    store: HybridStore,
    candidates: Sequence[RankedChunk],
    query: RetrievalQuery,
    reranker: Reranker,
    provider: Optional[EmbeddingProvider] = None,
) -> list[RankedChunk]:
    """Reorder the fused set by a stronger relevance model.

    late_interaction_maxsim embeds query and chunk tokens individually and
    sums per-query-token best cosines; embedding_similarity compares whole
    texts; none passes the fused order through. Always a permutation of
    the input.
    """
    if not candidates:
        raise ValueError("rerank needs a non-empty candidate list")
    if reranker.kind == "none":
        return [replace(c, final_rank=i + 1) for i, c in enumerate(candidates)]
    provider = provider or store.provider
    scores: dict[str, float] = {}
    if reranker.kind == "embedding_similarity":
        query_vector = provider.embed_one(query.semantic_text)
        for cand in candidates:
            chunk = store.get_chunk(cand.chunk_id)
            chunk_vector = provider.embed_one(chunk.text)
            scores[cand.chunk_id] = _cosine_f(query_vector, chunk_vector)
    else:
        query_tokens = query.semantic_text.split()
        query_vectors = provider.embed_batch(query_tokens) if query_tokens else np.zeros((0, provider.dimension))
        for cand in candidates:
            chunk_tokens = store.get_chunk(cand.chunk_id).text.split()
            chunk_vectors = (
                provider.embed_batch(chunk_tokens) if chunk_tokens else np.zeros((0, provider.dimension))
            )
            scores[cand.chunk_id] = maxsim_score(query_vectors, chunk_vectors)
    reordered = sorted(
        candidates,
        key=lambda c: (-scores[c.chunk_id], -c.fused_score, c.chunk_id),
    )
    return [
        replace(c, rerank_score=scores[c.chunk_id], final_rank=i + 1)
        for i, c in enumerate(reordered)
    ]


def _cosine_f(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def select_context(store: HybridStore, ranked: Sequence[RankedChunk], top_n: int) -> ContextSlots:
    """Take the first top_n chunks by final rank as prompt context slots."""
    ordered = sorted(ranked, key=lambda c: c.final_rank)
    slots = []
    seen = set()
    for cand in ordered:
        if len(slots) >= top_n:
            break
        if cand.chunk_id in seen:
            continue
        seen.add(cand.chunk_id)
        chunk = store.get_chunk(cand.chunk_id)
        slots.append(
            ContextSlot(
                chunk_id=chunk.chunk_id,
                source_kind=str(chunk.metadata.get("source_kind", "manual")),
                text=chunk.text,
            )
        )
    return ContextSlots(slots=tuple(slots), top_n=top_n)


# --- dynamic web context ------------------------------------------------------


@dataclass(frozen=True)
class SearchResult:
    url: str
    title: str
    text: str


class WebSearchClient:
    """Interface for web search; implementations must be deterministic in tests."""

    def search(self, query: str, max_results: int) -> list[SearchResult]:
        raise NotImplementedError


def query_fingerprint(query: str) -> str:
    return hashlib.sha256(query.encode("utf-8")).hexdigest()[:16]


class FixtureSearchClient(WebSearchClient):
    """File-backed search results keyed by a hash of the query text.

    A missing result file means "no results" (an empty list); a missing
    fixture directory means the search service is unavailable.
    """

    def __init__(self, directory: Path):
        self.directory = Path(directory)

    def search(self, query: str, max_results: int) -> list[SearchResult]:
        if not self.directory.is_dir():
            raise SearchUnavailableError(f"search fixture directory missing: {self.directory}")
        path = self.directory / f"{query_fingerprint(query)}.json"
        if not path.is_file():
            return []
        entries = json.loads(path.read_text(encoding="utf-8"))
        results = [
            SearchResult(url=e["url"], title=e.get("title", ""), text=e.get("text", ""))
            for e in entries
        ]
        return results[:max_results]

    def save_results(self, query: str, results: Sequence[SearchResult]) -> Path:
        """Record fixture results for a query (used to build test data)."""
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self.directory / f"{query_fingerprint(query)}.json"
        path.write_text(
            json.dumps(
                [{"url": r.url, "title": r.title, "text": r.text} for r in results],
                indent=2,
                sort_keys=True,
            ),
            encoding="utf-8",
        )
        return path


def dynamic_ingest(
    candidate: DependencyCandidate,
    search_client: WebSearchClient,
    store: HybridStore,
    chunker_cfg: ChunkerConfig = ChunkerConfig(),
    max_results: int = 3,
) -> UpsertStats:
    """Search the web for a candidate and index the first results.

    Result pages become web_search documents, chunked and embedded like
    static context; their chunks are tagged with the candidate id so they
    can be scoped or purged later.
    """
    query = build_query(candidate).semantic_text
    results = search_client.search(query, max_results=max_results)
    chunks: list[Chunk] = []
    for result in results[:max_results]:
        if not result.text.strip():
            continue
        doc = Document(
            doc_id=f"web:{hashlib.sha256(result.url.encode('utf-8')).hexdigest()[:16]}",
            source_kind="web_search",
            technology=None,
            origin=result.url,
            title=result.title or None,
            text=result.text,
            fetched_at="1970-01-01T00:00:00+00:00",
        )
        for chunk in chunk_document(doc, chunker_cfg):
            chunk.metadata["candidate_id"] = candidate.id
            chunks.append(chunk)
    if not chunks:
        return UpsertStats(inserted=0, replaced=0)
    embed_chunks(chunks, store.provider)
    return store.upsert_chunks(chunks)


# --- slot usage reporting -----------------------------------------------------


@dataclass(frozen=True)
class SlotUsageTable:
    """Fraction of records whose slot i came from each source kind."""

    rows: tuple[tuple[int, str, float], ...] = ()
    fill_rates: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        lines = ["slot,source_kind,fraction"]
        for slot, kind, fraction in self.rows:
            lines.append(f"{slot},{kind},{fraction}")
        return "\n".join(lines) + "\n"


def source_usage(records: Sequence) -> SlotUsageTable:
    """Tally context-slot provenance over validation records.

    Fractions within one slot position sum to 1 over the records that had
    that slot filled; the fill rate per slot is reported separately.
    """
    filled: dict[int, dict[str, int]] = {}
    totals: dict[int, int] = {}
    n_records = len(records)
    for record in records:
        for position, slot in enumerate(record.context.slots, start=1):
            totals[position] = totals.get(position, 0) + 1
            bucket = filled.setdefault(position, {})
            bucket[slot.source_kind] = bucket.get(slot.source_kind, 0) + 1
    rows = []
    fill_rates = {}
    for position in sorted(filled):
        fill_rates[position] = totals[position] / n_records if n_records else 0.0
        for kind in sorted(filled[position]):
            rows.append((position, kind, filled[position][kind] / totals[position]))
    return SlotUsageTable(rows=tuple(rows), fill_rates=fill_rates)
