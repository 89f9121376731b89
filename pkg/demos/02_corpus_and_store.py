#!/usr/bin/env python3
"""Ingest the golden corpus into a hybrid store and poke both index legs.

Documents are declared in a manifest with source kinds, windowed into
512-token chunks with 50 tokens of overlap, embedded with the offline
hashed-trigram provider, and indexed for exact cosine search plus BM25.
"""

from pathlib import Path

from ragdep import HashedTrigramEmbedder, HybridStore, chunk_document, load_corpus, load_manifest
from ragdep.corpus import ChunkerConfig, Document, embed_chunks

REPO = Path(__file__).resolve().parent.parent
GOLDEN = REPO / "data" / "golden"

manifest = load_manifest(GOLDEN / "manifest.yaml")
documents = load_corpus(GOLDEN / "corpus", manifest)
print(f"{len(documents)} documents:")
for doc in documents:
    print(f"  [{doc.source_kind:>13}] {doc.doc_id} ({len(doc.text.split())} tokens)")

# chunking arithmetic on a synthetic long document
long_doc = Document(doc_id="long", source_kind="manual", technology=None, origin="demo",
                    title=None, text=" ".join(f"tok{i}" for i in range(1000)))
windows = chunk_document(long_doc, ChunkerConfig())
print("\n1000-token document chunks (size 512, overlap 50):")
for chunk in windows:
    start, end = chunk.token_span
    print(f"  window {chunk.window_index}: tokens [{start}, {end}) length {end - start}")

provider = HashedTrigramEmbedder(provider_id="demo", dimension=256)
store = HybridStore(provider)
chunks = []
for doc in documents:
    chunks.extend(chunk_document(doc))
embed_chunks(chunks, provider)
stats = store.upsert_chunks(chunks)
print(f"\nstore: inserted {stats.inserted}, replaced {stats.replaced}, size {len(store)}")

print("\nBM25 for query terms ['server.port'] (sub-term split matches 'port'):")
for chunk_id, score in store.sparse_search(["server.port"], k=3):
    print(f"  {score:7.3f}  {chunk_id}")

print("\ndense cosine for 'which port does the web server listen on':")
query_vector = provider.embed_one("which port does the web server listen on")
for chunk_id, score in store.dense_search(query_vector, k=3):
    print(f"  {score:7.3f}  {chunk_id}")
