"""Command-line entry point: extract, ingest, validate, evaluate, report, annotate.

All subcommands are driven by one declarative YAML run config (see
docs/config.md). Exit codes: 0 success, 2 usage/config errors, 3
ingestion/provider failures, 4 validation provider failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import yaml

from . import evaluation
from .confignet import (
    DEFAULT_STOPLIST,
    ValueStoplist,
    candidate_to_dict,
    detect_candidates,
    parse_artifact,
)
from .corpus import ChunkerConfig, chunk_document, embed_chunks, load_corpus, load_manifest
from .embeddings import EmbeddingProvider, HashedTrigramEmbedder, HttpEmbeddingProvider
from .errors import (
    MalformedArtifactError,
    NotAFailureError,
    ProviderUnavailableError,
    RagdepError,
    RunConfigError,
    UnsupportedFormatError,
)
from .evaluation import (
    ExperimentConfig,
    ExperimentResult,
    ExperimentRunner,
    RagVariant,
    builtin_variants,
    load_dataset,
    persist_result,
    vanilla_variant,
)
from .gateway import ModelConfig, ModelGateway
from .retrieval import FixtureSearchClient, FusionConfig
from .store import HybridStore, load_store, save_store
from .validator import PipelineSettings, record_from_dict

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INGEST = 3
EXIT_VALIDATE = 4

_KNOWN_KEYS = {
    "project_roots",
    "corpus_root",
    "corpus_manifest",
    "store_dir",
    "embedding_providers",
    "models",
    "variants",
    "dataset",
    "split",
    "output_dir",
    "concurrency",
    "search",
    "stoplist",
    "chunker",
    "retrieval",
    "prompt",
    "run_log",
    "cache_dir",
}


@dataclass
class RunConfig:
    """Validated view of the YAML run config, with paths resolved."""

    base_dir: Path
    project_roots: list[Path] = field(default_factory=list)
    corpus_root: Optional[Path] = None
    corpus_manifest: Optional[Path] = None
    store_dir: Optional[Path] = None
    embedding_providers: dict = field(default_factory=dict)
    models: list[ModelConfig] = field(default_factory=list)
    variants: list[RagVariant] = field(default_factory=list)
    dataset: Optional[Path] = None
    split: str = "benchmark"
    output_dir: Path = Path("out")
    concurrency: int = 1
    search_fixture_dir: Optional[Path] = None
    stoplist: ValueStoplist = DEFAULT_STOPLIST
    chunker: ChunkerConfig = field(default_factory=ChunkerConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    k_dense: int = 50
    k_sparse: int = 50
    vanilla_prompt_variant: str = "base"
    templates_dir: Optional[Path] = None
    run_log: Optional[Path] = None
    cache_dir: Optional[Path] = None

    def model_by_id(self, model_id: str) -> ModelConfig:
        for model in self.models:
            if model.model_id == model_id:
                return model
        raise RunConfigError(f"model {model_id!r} is not declared in the run config")

    def variant_by_id(self, variant_id: str) -> RagVariant:
        for variant in self.variants:
            if variant.id == variant_id:
                return variant
        raise RunConfigError(f"variant {variant_id!r} is not declared in the run config")


def _as_variant(spec, vanilla_prompt_variant: str) -> RagVariant:
    builtins = builtin_variants()
    if isinstance(spec, str):
        if spec == "w/o":
            return vanilla_variant(prompt_variant=vanilla_prompt_variant)
        if spec in builtins:
            return builtins[spec]
        raise RunConfigError(f"unknown variant id {spec!r} (builtins: w/o, 1, 2, 3, 4)")
    if isinstance(spec, dict):
        known = {
            "id",
            "provider_id",
            "dimension",
            "reranker",
            "top_n",
            "dynamic_context",
            "prompt_variant",
            "shots",
        }
        unknown = set(spec) - known
        if unknown:
            raise RunConfigError(f"variant has unknown keys: {sorted(unknown)}")
        if "id" not in spec:
            raise RunConfigError("inline variant definitions need an 'id'")
        return RagVariant(**spec)
    raise RunConfigError(f"variant entries must be strings or objects, got {type(spec).__name__}")


def load_run_config(path: Path) -> RunConfig:
    """Parse and validate the run config; unknown keys are rejected."""
    path = Path(path)
    if not path.is_file():
        raise RunConfigError(f"run config not found: {path}")
    data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict):
        raise RunConfigError(f"run config {path} must be a mapping")
    unknown = set(data) - _KNOWN_KEYS
    if unknown:
        raise RunConfigError(f"run config has unknown keys: {sorted(unknown)}")
    base = path.resolve().parent

    def resolve(p) -> Path:
        p = Path(str(p))
        return p.resolve() if p.is_absolute() else (base / p).resolve()

    cfg = RunConfig(base_dir=base)
    cfg.project_roots = [resolve(p) for p in data.get("project_roots", [])]
    for key in ("corpus_root", "corpus_manifest", "store_dir", "dataset", "run_log", "cache_dir"):
        if data.get(key) is not None:
            setattr(cfg, key, resolve(data[key]))
    if data.get("output_dir") is not None:
        cfg.output_dir = resolve(data["output_dir"])
    cfg.split = str(data.get("split", "benchmark"))
    if cfg.split not in ("benchmark", "holdout", "all"):
        raise RunConfigError(f"split must be benchmark, holdout, or all, got {cfg.split!r}")
    cfg.concurrency = int(data.get("concurrency", 1))

    providers = data.get("embedding_providers", {})
    if not isinstance(providers, dict):
        raise RunConfigError("embedding_providers must be a mapping of id -> settings")
    cfg.embedding_providers = providers

    for spec in data.get("models", []):
        known = {"model_id", "endpoint", "api_key_env", "max_tokens", "timeout", "retries"}
        unknown = set(spec) - known
        if unknown:
            raise RunConfigError(f"model entry has unknown keys: {sorted(unknown)}")
        cfg.models.append(ModelConfig(**spec))

    prompt = data.get("prompt", {}) or {}
    unknown = set(prompt) - {"vanilla_variant", "templates_dir"}
    if unknown:
        raise RunConfigError(f"prompt section has unknown keys: {sorted(unknown)}")
    cfg.vanilla_prompt_variant = prompt.get("vanilla_variant", "base")
    if prompt.get("templates_dir"):
        cfg.templates_dir = resolve(prompt["templates_dir"])

    cfg.variants = [_as_variant(v, cfg.vanilla_prompt_variant) for v in data.get("variants", [])]

    search = data.get("search", {}) or {}
    unknown = set(search) - {"fixture_dir"}
    if unknown:
        raise RunConfigError(f"search section has unknown keys: {sorted(unknown)}")
    if search.get("fixture_dir"):
        cfg.search_fixture_dir = resolve(search["fixture_dir"])

    stoplist = data.get("stoplist")
    if stoplist is not None:
        unknown = set(stoplist) - {"values", "exclude_booleans"}
        if unknown:
            raise RunConfigError(f"stoplist section has unknown keys: {sorted(unknown)}")
        cfg.stoplist = ValueStoplist(
            values=frozenset(str(v) for v in stoplist.get("values", [])),
            exclude_booleans=bool(stoplist.get("exclude_booleans", True)),
        )

    chunker = data.get("chunker")
    if chunker is not None:
        unknown = set(chunker) - {"chunk_size", "overlap"}
        if unknown:
            raise RunConfigError(f"chunker section has unknown keys: {sorted(unknown)}")
        cfg.chunker = ChunkerConfig(
            chunk_size=int(chunker.get("chunk_size", 512)), overlap=int(chunker.get("overlap", 50))
        )

    retrieval = data.get("retrieval")
    if retrieval is not None:
        unknown = set(retrieval) - {"k_dense", "k_sparse", "k_rrf", "fusion", "alpha"}
        if unknown:
            raise RunConfigError(f"retrieval section has unknown keys: {sorted(unknown)}")
        cfg.k_dense = int(retrieval.get("k_dense", 50))
        cfg.k_sparse = int(retrieval.get("k_sparse", 50))
        cfg.fusion = FusionConfig(
            method=retrieval.get("fusion", "rrf"),
            k_rrf=int(retrieval.get("k_rrf", 60)),
            alpha=float(retrieval.get("alpha", 0.5)),
        )
    return cfg


def build_providers(cfg: RunConfig) -> dict[str, EmbeddingProvider]:
    providers: dict[str, EmbeddingProvider] = {}
    for provider_id, spec in cfg.embedding_providers.items():
        unknown = set(spec) - {"mode", "dimension", "endpoint", "api_key_env", "seed", "timeout", "retries"}
        if unknown:
            raise RunConfigError(f"provider {provider_id}: unknown keys {sorted(unknown)}")
        mode = spec.get("mode", "local_hash_fallback")
        dimension = int(spec.get("dimension", 256))
        if mode == "local_hash_fallback":
            providers[provider_id] = HashedTrigramEmbedder(
                provider_id=provider_id, dimension=dimension, seed=int(spec.get("seed", 0))
            )
        elif mode == "remote_http":
            import os

            providers[provider_id] = HttpEmbeddingProvider(
                provider_id=provider_id,
                dimension=dimension,
                endpoint=spec["endpoint"],
                api_key=os.environ.get(spec.get("api_key_env", ""), ""),
                timeout=float(spec.get("timeout", 30.0)),
                retries=int(spec.get("retries", 3)),
            )
        else:
            raise RunConfigError(f"provider {provider_id}: unknown mode {mode!r}")
    return providers


def build_gateway(cfg: RunConfig) -> ModelGateway:
    return ModelGateway(run_log_path=cfg.run_log, cache_dir=cfg.cache_dir)


def pipeline_settings(cfg: RunConfig) -> PipelineSettings:
    return PipelineSettings(
        k_dense=cfg.k_dense,
        k_sparse=cfg.k_sparse,
        fusion=cfg.fusion,
        vanilla_prompt_variant=cfg.vanilla_prompt_variant,
    )


# --- subcommands ---------------------------------------------------------------


def cmd_extract(args) -> int:
    root = Path(args.project_root)
    if not root.is_dir():
        print(f"error: project root {root} does not exist", file=sys.stderr)
        return EXIT_USAGE
    project = args.project or root.name
    stoplist = DEFAULT_STOPLIST
    if args.config:
        stoplist = load_run_config(args.config).stoplist
    options = []
    parsed_files = 0
    failures: list[str] = []
    for path in sorted(root.rglob("*")):
        if not path.is_file():
            continue
        rel = path.relative_to(root).as_posix()
        try:
            content = path.read_text(encoding="utf-8")
            options.extend(parse_artifact(project, rel, content))
            parsed_files += 1
        except UnsupportedFormatError:
            continue
        except (MalformedArtifactError, UnicodeDecodeError, OSError) as exc:
            failures.append(f"{rel}: {exc}")
    if failures:
        print("failed to parse:", file=sys.stderr)
        for failure in failures:
            print(f"  {failure}", file=sys.stderr)
        return EXIT_USAGE
    candidates = detect_candidates(options, stoplist)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for candidate in candidates:
            fh.write(json.dumps(candidate_to_dict(candidate), sort_keys=True) + "\n")
    print(
        f"parsed {parsed_files} files, {len(options)} options, "
        f"{len(candidates)} candidates -> {out}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_ingest(args) -> int:
    cfg = load_run_config(args.config)
    if cfg.corpus_manifest is None or cfg.corpus_root is None or cfg.store_dir is None:
        raise RunConfigError("ingest needs corpus_root, corpus_manifest, and store_dir")
    manifest = load_manifest(cfg.corpus_manifest)
    documents = load_corpus(cfg.corpus_root, manifest)
    providers = build_providers(cfg)
    if not providers:
        raise RunConfigError("ingest needs at least one embedding provider")
    store_dir = Path(args.store_dir) if args.store_dir else cfg.store_dir
    for provider_id, provider in providers.items():
        target = store_dir / provider_id
        if (target / "chunks.jsonl").is_file():
            store = load_store(target, provider)
        else:
            store = HybridStore(provider)
        chunks = []
        for doc in documents:
            chunks.extend(chunk_document(doc, cfg.chunker))
        try:
            embed_chunks(chunks, provider)
        except ProviderUnavailableError as exc:
            print(f"error: embedding provider {provider_id} failed: {exc}", file=sys.stderr)
            return EXIT_INGEST
        stats = store.upsert_chunks(chunks)
        save_store(store, target)
        print(
            f"[{provider_id}] {len(documents)} documents, {len(chunks)} chunks "
            f"(inserted {stats.inserted}, replaced {stats.replaced}) -> {target}",
            file=sys.stderr,
        )
    return EXIT_OK


def _load_stores(cfg: RunConfig, variants, store_dir: Optional[Path] = None) -> dict[str, HybridStore]:
    providers = build_providers(cfg)
    stores: dict[str, HybridStore] = {}
    base = store_dir or cfg.store_dir
    for variant in variants:
        if variant.is_vanilla or variant.provider_id in stores:
            continue
        if variant.provider_id not in providers:
            raise RunConfigError(f"variant {variant.id}: no embedding provider {variant.provider_id!r}")
        if base is None:
            raise RunConfigError("run config needs store_dir for RAG variants")
        directory = base / variant.provider_id
        if not directory.is_dir():
            raise RunConfigError(f"store for provider {variant.provider_id!r} not found at {directory}; run ingest first")
        stores[variant.provider_id] = load_store(directory, providers[variant.provider_id])
    return stores


def _runner(cfg: RunConfig, experiment: ExperimentConfig, store_dir: Optional[Path] = None) -> ExperimentRunner:
    stores = _load_stores(cfg, experiment.variants, store_dir)
    search_client = FixtureSearchClient(cfg.search_fixture_dir) if cfg.search_fixture_dir else None
    shot_pool = ()
    if any(v.shots for v in experiment.variants):
        items = load_dataset(cfg.dataset)
        benchmark_items = [item for item in items if item.split == "benchmark"]
        shot_pool = evaluation.build_shot_pool(benchmark_items, provider=None)
    return ExperimentRunner(
        experiment,
        build_gateway(cfg),
        stores=stores,
        search_client=search_client,
        shot_pool=shot_pool,
        templates_dir=cfg.templates_dir,
        settings=pipeline_settings(cfg),
    )


def cmd_validate(args) -> int:
    cfg = load_run_config(args.config)
    if cfg.dataset is None:
        raise RunConfigError("validate needs a dataset path in the run config")
    model = cfg.model_by_id(args.model)
    if args.vanilla:
        variant = vanilla_variant(cfg.vanilla_prompt_variant)
    else:
        try:
            variant = cfg.variant_by_id(args.variant)
        except RunConfigError:
            variant = _as_variant(args.variant, cfg.vanilla_prompt_variant)
    experiment = ExperimentConfig(
        models=(model,),
        variants=(variant,),
        dataset_path=cfg.dataset,
        split=args.split or cfg.split,
        output_dir=cfg.output_dir,
        concurrency=cfg.concurrency,
        run_id=args.run_id,
    )
    print(
        f"validating split {experiment.split!r} with model {model.model_id}, "
        f"variant {variant.id}",
        file=sys.stderr,
    )
    runner = _runner(cfg, experiment, Path(args.store_dir) if args.store_dir else None)
    result = runner.run()
    items = load_dataset(cfg.dataset)
    run_dir = persist_result(result, items, Path(args.output_dir) if args.output_dir else cfg.output_dir)
    _write_run_manifest(result, run_dir)
    cell = result.cells[0]
    if not cell.complete:
        print(f"error: validation aborted: {cell.error}", file=sys.stderr)
        return EXIT_VALIDATE
    print(f"{len(cell.records)} records -> {run_dir / 'records.jsonl'}", file=sys.stderr)
    return EXIT_OK


def _write_run_manifest(result: ExperimentResult, run_dir: Path) -> None:
    (run_dir / "run.json").write_text(
        json.dumps(
            {
                "run_id": result.run_id,
                "split": result.split,
                "n_items": result.n_items,
                "variant_order": list(result.variant_order),
                "model_order": list(result.model_order),
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )


def cmd_evaluate(args) -> int:
    cfg = load_run_config(args.config)
    if cfg.dataset is None:
        raise RunConfigError("evaluate needs a dataset path in the run config")
    if not cfg.models or not cfg.variants:
        raise RunConfigError("evaluate needs models and variants in the run config")
    experiment = ExperimentConfig(
        models=tuple(cfg.models),
        variants=tuple(cfg.variants),
        dataset_path=cfg.dataset,
        split=args.split or cfg.split,
        output_dir=cfg.output_dir,
        concurrency=cfg.concurrency,
        run_id=args.run_id,
    )
    runner = _runner(cfg, experiment, Path(args.store_dir) if args.store_dir else None)
    result = runner.run()
    items = load_dataset(cfg.dataset)
    out_dir = Path(args.output_dir) if args.output_dir else cfg.output_dir
    run_dir = persist_result(result, items, out_dir)
    _write_run_manifest(result, run_dir)
    print(evaluation.render_metrics_markdown(result))
    print(f"run {result.run_id} -> {run_dir}", file=sys.stderr)
    if any(not cell.complete for cell in result.cells):
        return EXIT_VALIDATE
    return EXIT_OK


def _load_run(cfg: RunConfig, run_id: str, output_dir: Optional[Path]):
    run_dir = (output_dir or cfg.output_dir) / run_id
    manifest_path = run_dir / "run.json"
    records_path = run_dir / "records.jsonl"
    if not manifest_path.is_file() or not records_path.is_file():
        raise RunConfigError(f"run {run_id!r} not found under {run_dir.parent}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    records = []
    with open(records_path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(record_from_dict(json.loads(line)))
    return run_dir, manifest, records


def cmd_report(args) -> int:
    cfg = load_run_config(args.config)
    run_dir, manifest, records = _load_run(cfg, args.run_id, None)
    items = load_dataset(cfg.dataset)
    labels = [item for item in items if manifest["split"] in ("all", item.split)]
    result = ExperimentResult(
        run_id=manifest["run_id"],
        split=manifest["split"],
        n_items=manifest["n_items"],
        variant_order=tuple(manifest["variant_order"]),
        model_order=tuple(manifest["model_order"]),
    )
    for variant_id in result.variant_order:
        for model_id in result.model_order:
            cell_records = sorted(
                (r for r in records if r.rag_variant_id == variant_id and r.model_id == model_id),
                key=lambda r: r.candidate_id,
            )
            cell = evaluation.CellResult(rag_variant_id=variant_id, model_id=model_id, records=cell_records)
            if cell_records:
                cell.confusion = evaluation.compute_confusion(cell_records, labels)
                cell.metrics = evaluation.compute_metrics(cell.confusion)
                cell.slot_usage = evaluation.source_usage(cell_records)
                cell.n_defaulted = evaluation.count_defaulted(cell_records)
            else:
                cell.complete = False
                cell.error = "no records"
            result.cells.append(cell)
    evaluation.emit_report(result, args.format, run_dir)
    if args.format == "markdown":
        print(evaluation.render_metrics_markdown(result))
    else:
        print(evaluation.render_metrics_csv(result))
    return EXIT_OK


def cmd_annotate(args) -> int:
    cfg = load_run_config(args.config)
    run_dir, _manifest, records = _load_run(cfg, args.run_id, None)
    items = load_dataset(cfg.dataset)
    updated = evaluation.annotate_failure(
        items,
        records,
        args.record,
        args.category,
        notes=args.notes,
        audit_path=run_dir / "annotations_audit.jsonl",
        model_id=args.model,
        rag_variant_id=args.variant,
    )
    evaluation.save_dataset(updated, cfg.dataset)
    print(f"annotated {args.record} as {args.category}", file=sys.stderr)
    return EXIT_OK


# --- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ragdep", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="parse a project and write dependency candidates")
    p.add_argument("project_root")
    p.add_argument("--out", required=True, help="output JSONL path")
    p.add_argument("--project", help="project name (default: root directory name)")
    p.add_argument("--config", help="run config (for the value stoplist)")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("ingest", help="build hybrid stores from the corpus manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--store-dir", help="override the store directory")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("validate", help="validate the dataset with one model and variant")
    p.add_argument("--config", required=True)
    p.add_argument("--model", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--variant", help="RAG variant id")
    group.add_argument("--vanilla", action="store_true", help="no retrieval (baseline)")
    p.add_argument("--split", choices=["benchmark", "holdout", "all"])
    p.add_argument("--run-id")
    p.add_argument("--store-dir")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("evaluate", help="run the full models x variants grid")
    p.add_argument("--config", required=True)
    p.add_argument("--split", choices=["benchmark", "holdout", "all"])
    p.add_argument("--run-id")
    p.add_argument("--store-dir")
    p.add_argument("--output-dir")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="recompute reports from a persisted run")
    p.add_argument("--config", required=True)
    p.add_argument("--run-id", required=True)
    p.add_argument("--format", choices=["markdown", "csv"], default="markdown")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("annotate", help="attach a failure category to a record")
    p.add_argument("--config", required=True)
    p.add_argument("--run-id", required=True)
    p.add_argument("--record", required=True, help="candidate id of the failed validation")
    p.add_argument("--category", required=True, choices=list(evaluation.FAILURE_CATEGORIES))
    p.add_argument("--model")
    p.add_argument("--variant")
    p.add_argument("--notes")
    p.set_defaults(func=cmd_annotate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except NotAFailureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ProviderUnavailableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATE if args.command in ("validate", "evaluate") else EXIT_INGEST
    except RagdepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
