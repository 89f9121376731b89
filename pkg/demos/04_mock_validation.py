#!/usr/bin/env python3
"""Validate one candidate end to end with the deterministic mock model.

Shows the five-section prompt (system message, dependency definition,
retrieved context, validation instruction, response format), the raw model
response, and the parsed verdict, for both a RAG run and the vanilla
baseline.
"""

import sys
from pathlib import Path

from ragdep import (
    HashedTrigramEmbedder,
    HybridStore,
    ModelConfig,
    ModelGateway,
    ValidationPipeline,
    chunk_document,
    load_corpus,
    load_manifest,
)
from ragdep.corpus import embed_chunks
from ragdep.evaluation import builtin_variants

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
mock = ModelConfig(model_id="mock-validator", endpoint="mock://dependency-rule")
pipeline = ValidationPipeline(ModelGateway())

variant = builtin_variants()["2"]
record = pipeline.validate_candidate(candidate, mock, variant=variant, store=store)
print(f"RAG variant {variant.id}: isDependency={record.verdict.is_dependency} "
      f"uncertainty={record.verdict.uncertainty} parse={record.verdict.parse_status}")
print(f"  context slots: {[s.source_kind for s in record.context.slots]}")
print(f"  prompt sha256: {record.prompt_sha256[:16]}...  wall time {record.wall_time_ms:.1f} ms")

vanilla = pipeline.validate_candidate(candidate, mock, variant=None)
print(f"\nvanilla ('{vanilla.rag_variant_id}'): isDependency={vanilla.verdict.is_dependency}, "
      f"{len(vanilla.context)} context slots")
print("\nmodel rationale:")
print(" ", record.verdict.rationale)
