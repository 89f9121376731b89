"""ragdep: configuration dependency candidates, hybrid retrieval, LLM validation.

The package has three layers: a config-artifact front end that extracts
value-equality dependency candidates across technologies, a local hybrid
retrieval stack (chunking, embeddings, dense + BM25 search, rank fusion,
re-ranking), and a validation/evaluation harness that prompts a model for
structured verdicts and scores them against labeled ground truth.
"""

from .confignet import (
    DEFAULT_STOPLIST,
    ConfigOption,
    DependencyCandidate,
    NormalizedValue,
    ValueStoplist,
    detect_candidates,
    normalize_value,
    parse_artifact,
)
from .corpus import Chunk, ChunkerConfig, CorpusManifest, Document, chunk_document, load_corpus, load_manifest
from .embeddings import EmbeddingProvider, HashedTrigramEmbedder, HttpEmbeddingProvider, cosine
from .evaluation import (
    ConfusionMatrix,
    ExperimentConfig,
    ExperimentRunner,
    FAILURE_CATEGORIES,
    LabeledDependency,
    MetricsReport,
    RagVariant,
    annotate_failure,
    build_shot_pool,
    builtin_variants,
    compute_confusion,
    compute_metrics,
    emit_report,
    failure_table,
    load_dataset,
    persist_result,
    refined_variant,
    run_experiment,
    save_dataset,
    vanilla_variant,
)
from .gateway import CompletionResult, MockModel, ModelConfig, ModelGateway, mock_complete
from .retrieval import (
    ContextSlots,
    FixtureSearchClient,
    FusionConfig,
    RankedChunk,
    Reranker,
    RetrievalQuery,
    SearchResult,
    WebSearchClient,
    build_query,
    dynamic_ingest,
    hybrid_search,
    rerank,
    rewrite_query,
    select_context,
    source_usage,
)
from .store import HybridStore, UpsertStats, load_store, save_store
from .validator import (
    Prompt,
    ShotExample,
    ValidationPipeline,
    ValidationRecord,
    Verdict,
    build_prompt,
    parse_verdict,
    select_shots,
)

__version__ = "0.1.0"
