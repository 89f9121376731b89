#!/usr/bin/env python3
"""From a dependency candidate to ranked context slots.

The retrieval path: template query rewriting, a dense cosine leg plus a
sparse BM25 leg fused with Reciprocal Rank Fusion (k=60), late-interaction
MaxSim re-ranking, and top-N slot selection.
"""

import sys
from pathlib import Path

from ragdep import (
    HashedTrigramEmbedder,
    HybridStore,
    Reranker,
    build_query,
    chunk_document,
    hybrid_search,
    load_corpus,
    load_manifest,
    rerank,
    rewrite_query,
    select_context,
)
from ragdep.corpus import embed_chunks

sys.path.insert(0, str(Path(__file__).resolve().parent))
from _demo_common import port_candidate  # noqa: E402

REPO = Path(__file__).resolve().parent.parent
GOLDEN = REPO / "data" / "golden"

provider = HashedTrigramEmbedder(provider_id="qwen2", dimension=3584)
store = HybridStore(provider)
chunks = []
for doc in load_corpus(GOLDEN / "corpus", load_manifest(GOLDEN / "manifest.yaml")):
    chunks.extend(chunk_document(doc))
embed_chunks(chunks, provider)
store.upsert_chunks(chunks)

candidate = port_candidate()
query = build_query(candidate)
print("semantic query:", query.semantic_text)
print("keyword terms: ", ", ".join(query.keyword_terms))
query = rewrite_query(query)
print("rewritten:     ", query.semantic_text)

ranked = hybrid_search(store, query)
print("\nfused ranking (RRF, k=60):")
for item in ranked:
    print(f"  rank {item.final_rank}  dense={item.dense_rank} sparse={item.sparse_rank} "
          f"fused={item.fused_score:.6f}  {item.chunk_id}")

reranked = rerank(store, ranked, query, Reranker("late_interaction_maxsim"))
print("\nafter MaxSim re-ranking:")
for item in reranked:
    print(f"  rank {item.final_rank}  maxsim={item.rerank_score:8.3f}  {item.chunk_id}")

slots = select_context(store, reranked, top_n=5)
print(f"\ntop-{slots.top_n} context slots:")
for i, slot in enumerate(slots.slots, start=1):
    print(f"  [Context {i} | {slot.source_kind}] {slot.text[:70]}...")
