"""Drives the shipped 12-item golden benchmark fully offline."""

from pathlib import Path

from ragdep.corpus import ChunkerConfig, chunk_document, embed_chunks, load_corpus, load_manifest
from ragdep.embeddings import HashedTrigramEmbedder
from ragdep.evaluation import (
    ExperimentConfig,
    ExperimentRunner,
    builtin_variants,
    load_dataset,
    persist_result,
    vanilla_variant,
)
from ragdep.gateway import ModelConfig, ModelGateway
from ragdep.retrieval import FixtureSearchClient
from ragdep.store import HybridStore

REPO = Path(__file__).parent.parent
GOLDEN = REPO / "data" / "golden"

MOCK_MODEL = ModelConfig(model_id="mock-validator", endpoint="mock://dependency-rule")


def build_golden_stores():
    """Fresh per-provider stores over the golden corpus (6 docs, 6 chunks each)."""
    manifest = load_manifest(GOLDEN / "manifest.yaml")
    documents = load_corpus(GOLDEN / "corpus", manifest)
    stores = {}
    for provider_id, dimension in (("ada2", 1536), ("qwen2", 3584)):
        provider = HashedTrigramEmbedder(provider_id=provider_id, dimension=dimension)
        store = HybridStore(provider)
        chunks = []
        for doc in documents:
            chunks.extend(chunk_document(doc, ChunkerConfig()))
        embed_chunks(chunks, provider)
        store.upsert_chunks(chunks)
        stores[provider_id] = store
    return stores


def run_golden(output_dir: Path, run_id: str = "golden"):
    """One full grid run: mock model x (w/o + variants 1-4) on the 12 benchmark items."""
    cfg = ExperimentConfig(
        models=(MOCK_MODEL,),
        variants=(vanilla_variant(),) + tuple(builtin_variants().values()),
        dataset_path=GOLDEN / "dataset.jsonl",
        split="benchmark",
        output_dir=Path(output_dir),
        concurrency=1,
        run_id=run_id,
    )
    runner = ExperimentRunner(
        cfg,
        ModelGateway(),
        stores=build_golden_stores(),
        search_client=FixtureSearchClient(GOLDEN / "websearch"),
    )
    result = runner.run()
    items = load_dataset(GOLDEN / "dataset.jsonl")
    run_dir = persist_result(result, items, cfg.output_dir)
    return result, run_dir
