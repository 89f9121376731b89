"""Datasets, confusion-matrix metrics, the experiment grid, and reports.

Labeled dependencies live in JSON Lines files, one object per line, split
into a benchmark and a holdout set. Holdout items are fenced off at
runtime: they can never feed shot pools or failure annotation. The grid
crosses models with retrieval conditions ("w/o" is the vanilla baseline)
and persists per-cell records, metrics, slot usage, and failures.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

from .confignet import DependencyCandidate, candidate_from_dict, candidate_to_dict
from .embeddings import EmbeddingProvider
from .errors import (
    ContextTooLongError,
    DuplicateIdError,
    EmptyMatrixError,
    HoldoutLeakageError,
    MissingLabelError,
    NotAFailureError,
    ProviderUnavailableError,
    SchemaViolationError,
)
from .gateway import ModelConfig, ModelGateway
from .retrieval import SlotUsageTable, source_usage
from .store import HybridStore
from .validator import (
    PipelineSettings,
    ShotExample,
    ValidationPipeline,
    ValidationRecord,
    candidate_summary,
    record_to_dict,
)

logger = logging.getLogger(__name__)

FAILURE_CATEGORIES = (
    "inheritance_and_overrides",
    "configuration_consistency",
    "resource_sharing",
    "ambiguous_option_values",
    "port_mapping",
    "context_availability_retrieval_utilization",
    "independent_technologies_services",
    "others",
)

SPLITS = ("benchmark", "holdout")

VANILLA_ID = "w/o"


@dataclass(frozen=True)
class LabeledDependency:
    """A dependency candidate with its ground-truth label."""

    candidate: DependencyCandidate
    label: bool
    borderline: bool = False
    notes: Optional[str] = None
    split: str = "benchmark"
    failure_category: Optional[str] = None


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    n_failures: int
    degenerate_flags: frozenset = frozenset()


@dataclass(frozen=True)
class RagVariant:
    """One retrieval condition of the grid; id "w/o" is the vanilla baseline."""

    id: str
    provider_id: str = ""
    dimension: int = 0
    reranker: str = "none"
    top_n: int = 0
    dynamic_context: bool = False
    prompt_variant: str = "base"
    shots: int = 0

    @property
    def is_vanilla(self) -> bool:
        return self.id == VANILLA_ID


def vanilla_variant(prompt_variant: str = "base") -> RagVariant:
    return RagVariant(id=VANILLA_ID, prompt_variant=prompt_variant)


def builtin_variants() -> dict[str, RagVariant]:
    """The four standard retrieval conditions.

    They differ in exactly one component at a time: embedding model
    (ada2-class 1536 vs Qwen2-class 3584), re-ranking (late-interaction
    MaxSim vs whole-text embedding similarity), and context size (5 vs 3).
    """
    return {
        "1": RagVariant(
            id="1",
            provider_id="ada2",
            dimension=1536,
            reranker="late_interaction_maxsim",
            top_n=5,
            dynamic_context=True,
        ),
        "2": RagVariant(
            id="2",
            provider_id="qwen2",
            dimension=3584,
            reranker="late_interaction_maxsim",
            top_n=5,
            dynamic_context=True,
        ),
        "3": RagVariant(
            id="3",
            provider_id="qwen2",
            dimension=3584,
            reranker="embedding_similarity",
            top_n=5,
            dynamic_context=True,
        ),
        "4": RagVariant(
            id="4",
            provider_id="qwen2",
            dimension=3584,
            reranker="late_interaction_maxsim",
            top_n=3,
            dynamic_context=True,
        ),
    }


def refined_variant(base: RagVariant, shots: int = 2) -> RagVariant:
    """Failure-analysis refinement: precise prompt plus few-shot examples."""
    return replace(base, prompt_variant="refined", shots=shots)


# --- dataset I/O --------------------------------------------------------------


_OPTION_FIELDS = ("file", "technology", "name", "value")


def _require(obj: dict, key: str, line_no: int):
    if key not in obj:
        raise SchemaViolationError(f"line {line_no}: missing field {key!r}", line=line_no, field=key)
    return obj[key]


def load_dataset(path: Path) -> list[LabeledDependency]:
    """Read and validate a labeled-dependency JSONL file."""
    path = Path(path)
    items: list[LabeledDependency] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolationError(f"line {line_no}: invalid JSON ({exc})", line=line_no) from exc
            if not isinstance(obj, dict):
                raise SchemaViolationError(f"line {line_no}: expected an object", line=line_no)
            for key in ("id", "project", "option_a", "option_b", "label", "split"):
                _require(obj, key, line_no)
            for side in ("option_a", "option_b"):
                option = obj[side]
                if not isinstance(option, dict):
                    raise SchemaViolationError(
                        f"line {line_no}: {side} must be an object", line=line_no, field=side
                    )
                for key in _OPTION_FIELDS:
                    if key not in option:
                        raise SchemaViolationError(
                            f"line {line_no}: {side} missing {key!r}", line=line_no, field=f"{side}.{key}"
                        )
            if not isinstance(obj["label"], bool):
                raise SchemaViolationError(f"line {line_no}: label must be a boolean", line=line_no, field="label")
            if obj["split"] not in SPLITS:
                raise SchemaViolationError(
                    f"line {line_no}: split must be one of {SPLITS}", line=line_no, field="split"
                )
            category = obj.get("failure_category")
            if category is not None and category not in FAILURE_CATEGORIES:
                raise SchemaViolationError(
                    f"line {line_no}: unknown failure_category {category!r}",
                    line=line_no,
                    field="failure_category",
                )
            candidate = candidate_from_dict(obj)
            if candidate.id in seen:
                raise DuplicateIdError(f"line {line_no}: duplicate candidate id {candidate.id}")
            seen.add(candidate.id)
            items.append(
                LabeledDependency(
                    candidate=candidate,
                    label=obj["label"],
                    borderline=bool(obj.get("borderline", False)),
                    notes=obj.get("notes"),
                    split=obj["split"],
                    failure_category=category,
                )
            )
    counts = {split: sum(1 for it in items if it.split == split) for split in SPLITS}
    logger.info("loaded %d labeled dependencies from %s (%s)", len(items), path, counts)
    return items


def save_dataset(items: Sequence[LabeledDependency], path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            row = candidate_to_dict(item.candidate)
            row.update(
                {
                    "label": item.label,
                    "borderline": item.borderline,
                    "notes": item.notes,
                    "split": item.split,
                    "failure_category": item.failure_category,
                }
            )
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def build_shot_pool(
    items: Sequence[LabeledDependency], provider: Optional[EmbeddingProvider] = None
) -> list[ShotExample]:
    """Turn labeled benchmark items into a few-shot pool.

    Guard: holdout items must never reach the pool; passing any raises
    HoldoutLeakageError. Without a provider, embeddings stay unset and are
    computed lazily against the active variant's provider.
    """
    leaked = [item.candidate.id for item in items if item.split == "holdout"]
    if leaked:
        raise HoldoutLeakageError(
            f"{len(leaked)} holdout items were offered to the shot pool (e.g. {leaked[0]})"
        )
    pool = []
    for item in items:
        summary = candidate_summary(item.candidate)
        pool.append(
            ShotExample(
                id=item.candidate.id,
                summary=summary,
                label=item.label,
                embedding=provider.embed_one(summary) if provider is not None else None,
            )
        )
    return pool


# --- metrics ------------------------------------------------------------------


def _label_map(labels) -> dict[str, bool]:
    if isinstance(labels, Mapping):
        return dict(labels)
    out: dict[str, bool] = {}
    for item in labels:
        if item.candidate.id in out:
            raise DuplicateIdError(f"duplicate label for candidate {item.candidate.id}")
        out[item.candidate.id] = item.label
    return out


def compute_confusion(records: Sequence[ValidationRecord], labels) -> ConfusionMatrix:
    """Tally predictions against ground truth.

    Defaulted-parse records count with their (negative) default prediction;
    they are tallied separately by count_defaulted.
    """
    label_map = _label_map(labels)
    tp = fp = tn = fn = 0
    for record in records:
        if record.candidate_id not in label_map:
            raise MissingLabelError(f"no label for candidate {record.candidate_id}")
        label = label_map[record.candidate_id]
        predicted = record.verdict.is_dependency
        if predicted and label:
            tp += 1
        elif predicted and not label:
            fp += 1
        elif not predicted and not label:
            tn += 1
        else:
            fn += 1
    return ConfusionMatrix(tp=tp, fp=fp, tn=tn, fn=fn)


def count_defaulted(records: Sequence[ValidationRecord]) -> int:
    return sum(1 for r in records if r.verdict.parse_status == "defaulted")


def compute_metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Precision, recall, and F1 with explicit degenerate flags instead of NaN."""
    if cm.total == 0:
        raise EmptyMatrixError("confusion matrix has no entries")
    flags = set()
    if cm.tp + cm.fp == 0:
        precision = 0.0
        flags.add("no_positive_predictions")
    else:
        precision = cm.tp / (cm.tp + cm.fp)
    if cm.tp + cm.fn == 0:
        recall = 0.0
        flags.add("no_positive_labels")
    else:
        recall = cm.tp / (cm.tp + cm.fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return MetricsReport(
        precision=precision,
        recall=recall,
        f1=f1,
        n_failures=cm.fp + cm.fn,
        degenerate_flags=frozenset(flags),
    )


# --- experiment grid ----------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    models: tuple[ModelConfig, ...]
    variants: tuple[RagVariant, ...]
    dataset_path: Path
    split: str = "benchmark"
    output_dir: Path = Path("out")
    concurrency: int = 1
    run_id: Optional[str] = None


@dataclass
class CellResult:
    rag_variant_id: str
    model_id: str
    records: list[ValidationRecord] = field(default_factory=list)
    confusion: Optional[ConfusionMatrix] = None
    metrics: Optional[MetricsReport] = None
    slot_usage: Optional[SlotUsageTable] = None
    n_defaulted: int = 0
    complete: bool = True
    error: Optional[str] = None


@dataclass
class ExperimentResult:
    run_id: str
    split: str
    n_items: int
    variant_order: tuple[str, ...]
    model_order: tuple[str, ...]
    cells: list[CellResult] = field(default_factory=list)

    def cell(self, rag_variant_id: str, model_id: str) -> CellResult:
        return next(
            c for c in self.cells if c.rag_variant_id == rag_variant_id and c.model_id == model_id
        )

    def mean_row(self, rag_variant_id: str) -> Optional[tuple[float, float, float, float]]:
        """Unweighted arithmetic mean over complete model cells of a variant."""
        cells = [
            c
            for c in self.cells
            if c.rag_variant_id == rag_variant_id and c.complete and c.metrics is not None
        ]
        if not cells:
            return None
        n = len(cells)
        return (
            sum(c.metrics.n_failures for c in cells) / n,
            sum(c.metrics.precision for c in cells) / n,
            sum(c.metrics.recall for c in cells) / n,
            sum(c.metrics.f1 for c in cells) / n,
        )


def default_run_id(cfg: ExperimentConfig) -> str:
    import hashlib

    descriptor = json.dumps(
        {
            "models": [m.model_id for m in cfg.models],
            "variants": [v.id for v in cfg.variants],
            "dataset": Path(cfg.dataset_path).name,
            "split": cfg.split,
        },
        sort_keys=True,
    )
    return "run-" + hashlib.sha256(descriptor.encode("utf-8")).hexdigest()[:12]


class ExperimentRunner:
    """Executes the models x variants grid over one dataset split."""

    def __init__(
        self,
        cfg: ExperimentConfig,
        gateway: ModelGateway,
        stores: Union[HybridStore, Mapping[str, HybridStore], None] = None,
        search_client=None,
        shot_pool: Sequence[ShotExample] = (),
        templates_dir: Optional[Path] = None,
        settings: PipelineSettings = PipelineSettings(),
    ):
        self.cfg = cfg
        self.gateway = gateway
        self._stores = stores
        self.pipeline = ValidationPipeline(
            gateway,
            templates_dir=templates_dir,
            search_client=search_client,
            shot_pool=shot_pool,
            settings=settings,
        )

    def store_for(self, variant: RagVariant) -> Optional[HybridStore]:
        if variant.is_vanilla:
            return None
        if isinstance(self._stores, HybridStore):
            return self._stores
        if self._stores is None:
            raise ValueError(f"variant {variant.id} needs a store but none was provided")
        try:
            return self._stores[variant.provider_id]
        except KeyError:
            raise ValueError(f"no store for embedding provider {variant.provider_id!r}") from None

    def run(self) -> ExperimentResult:
        items = load_dataset(self.cfg.dataset_path)
        if self.cfg.split != "all":
            items = [item for item in items if item.split == self.cfg.split]
        items = sorted(items, key=lambda it: it.candidate.id)
        result = ExperimentResult(
            run_id=self.cfg.run_id or default_run_id(self.cfg),
            split=self.cfg.split,
            n_items=len(items),
            variant_order=tuple(v.id for v in self.cfg.variants),
            model_order=tuple(m.model_id for m in self.cfg.models),
        )
        for variant in self.cfg.variants:
            for model in self.cfg.models:
                result.cells.append(self._run_cell(variant, model, items))
        return result

    def _run_cell(
        self, variant: RagVariant, model: ModelConfig, items: Sequence[LabeledDependency]
    ) -> CellResult:
        cell = CellResult(rag_variant_id=variant.id, model_id=model.model_id)
        logger.info("cell (%s, %s): validating %d items", variant.id, model.model_id, len(items))
        store = self.store_for(variant)
        candidates = [item.candidate for item in items]

        def validate(candidate):
            return self.pipeline.validate_candidate(candidate, model, variant=variant, store=store)

        try:
            if self.cfg.concurrency > 1:
                with ThreadPoolExecutor(max_workers=self.cfg.concurrency) as pool:
                    cell.records = list(pool.map(validate, candidates))
            else:
                cell.records = [validate(c) for c in candidates]
        except (ProviderUnavailableError, ContextTooLongError) as exc:
            logger.warning("cell (%s, %s) aborted: %s", variant.id, model.model_id, exc)
            cell.complete = False
            cell.error = str(exc)
            cell.records = []
            return cell
        cell.records.sort(key=lambda r: r.candidate_id)
        cell.confusion = compute_confusion(cell.records, items)
        cell.metrics = compute_metrics(cell.confusion)
        cell.slot_usage = source_usage(cell.records)
        cell.n_defaulted = count_defaulted(cell.records)
        return cell


def run_experiment(
    cfg: ExperimentConfig,
    gateway: ModelGateway,
    stores: Union[HybridStore, Mapping[str, HybridStore], None] = None,
    **runner_kwargs,
) -> ExperimentResult:
    """Run the full grid; see ExperimentRunner for the infrastructure knobs."""
    return ExperimentRunner(cfg, gateway, stores=stores, **runner_kwargs).run()


# --- failure annotation ---------------------------------------------------------


def _is_failure(record: ValidationRecord, label: bool) -> bool:
    return record.verdict.is_dependency != label


def annotate_failure(
    items: Sequence[LabeledDependency],
    records: Sequence[ValidationRecord],
    candidate_id: str,
    category: str,
    notes: Optional[str] = None,
    audit_path: Optional[Path] = None,
    model_id: Optional[str] = None,
    rag_variant_id: Optional[str] = None,
) -> list[LabeledDependency]:
    """Attach a failure category to a wrongly validated item.

    Only records that disagree with the ground truth can be annotated;
    re-annotation overwrites the category and leaves an audit entry.
    """
    if category not in FAILURE_CATEGORIES:
        raise ValueError(f"unknown failure category: {category}")
    by_id = {item.candidate.id: item for item in items}
    if candidate_id not in by_id:
        raise MissingLabelError(f"no labeled item for candidate {candidate_id}")
    item = by_id[candidate_id]
    if item.split == "holdout":
        raise HoldoutLeakageError(
            f"candidate {candidate_id} is a holdout item; failure analysis must not read it"
        )
    matching = [
        r
        for r in records
        if r.candidate_id == candidate_id
        and (model_id is None or r.model_id == model_id)
        and (rag_variant_id is None or r.rag_variant_id == rag_variant_id)
    ]
    if not matching:
        raise MissingLabelError(f"no validation record for candidate {candidate_id}")
    if not any(_is_failure(r, item.label) for r in matching):
        raise NotAFailureError(f"candidate {candidate_id} was validated correctly")
    if audit_path is not None:
        audit_path = Path(audit_path)
        audit_path.parent.mkdir(parents=True, exist_ok=True)
        with open(audit_path, "a", encoding="utf-8") as fh:
            fh.write(
                json.dumps(
                    {
                        "candidate_id": candidate_id,
                        "old_category": item.failure_category,
                        "new_category": category,
                        "notes": notes,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    updated = replace(item, failure_category=category, notes=notes if notes is not None else item.notes)
    return [updated if it.candidate.id == candidate_id else it for it in items]


@dataclass(frozen=True)
class CategoryCountTable:
    conditions: tuple[str, ...]
    counts: Mapping[str, Mapping[str, int]]  # category -> condition -> count

    def total(self, condition: str) -> int:
        return sum(self.counts[cat].get(condition, 0) for cat in FAILURE_CATEGORIES)

    def to_csv(self) -> str:
        lines = ["category," + ",".join(self.conditions)]
        for category in FAILURE_CATEGORIES:
            row = [str(self.counts[category].get(cond, 0)) for cond in self.conditions]
            lines.append(f"{category}," + ",".join(row))
        lines.append("total," + ",".join(str(self.total(c)) for c in self.conditions))
        return "\n".join(lines) + "\n"


def failure_table(
    items: Sequence[LabeledDependency],
    records_by_condition: Mapping[str, Sequence[ValidationRecord]],
) -> CategoryCountTable:
    """Count failures per category and condition; unannotated ones are others."""
    label_map = {item.candidate.id: item for item in items}
    counts: dict[str, dict[str, int]] = {category: {} for category in FAILURE_CATEGORIES}
    for condition, records in records_by_condition.items():
        for record in records:
            item = label_map.get(record.candidate_id)
            if item is None or not _is_failure(record, item.label):
                continue
            category = item.failure_category or "others"
            bucket = counts[category]
            bucket[condition] = bucket.get(condition, 0) + 1
    return CategoryCountTable(conditions=tuple(records_by_condition), counts=counts)


# --- reports ---------------------------------------------------------------------


def _fmt2(x: float) -> str:
    return f"{x:.2f}"


def render_metrics_markdown(result: ExperimentResult) -> str:
    lines = [
        f"# Validation effectiveness ({result.split} split, {result.n_items} items)",
        "",
        "| RAG ID | LLM | #Failures | Precision | Recall | F1-Score |",
        "| --- | --- | --- | --- | --- | --- |",
    ]
    footnotes = []
    for variant_id in result.variant_order:
        for model_id in result.model_order:
            cell = result.cell(variant_id, model_id)
            if cell.complete and cell.metrics:
                m = cell.metrics
                lines.append(
                    f"| {variant_id} | {model_id} | {m.n_failures} | "
                    f"{_fmt2(m.precision)} | {_fmt2(m.recall)} | {_fmt2(m.f1)} |"
                )
            else:
                lines.append(f"| {variant_id} | {model_id} | — | — | — | — |")
                footnotes.append(f"cell ({variant_id}, {model_id}) incomplete: {cell.error}")
        mean = result.mean_row(variant_id)
        if mean is not None:
            failures, precision, recall, f1 = mean
            lines.append(
                f"| {variant_id} | mean | {round(failures)} | "
                f"{_fmt2(precision)} | {_fmt2(recall)} | {_fmt2(f1)} |"
            )
    if footnotes:
        lines.append("")
        for note in footnotes:
            lines.append(f"- {note}")
    return "\n".join(lines) + "\n"


def render_metrics_csv(result: ExperimentResult) -> str:
    lines = ["rag_id,model,failures,precision,recall,f1"]
    for variant_id in result.variant_order:
        for model_id in result.model_order:
            cell = result.cell(variant_id, model_id)
            if cell.complete and cell.metrics:
                m = cell.metrics
                lines.append(
                    f"{variant_id},{model_id},{m.n_failures},{m.precision!r},{m.recall!r},{m.f1!r}"
                )
            else:
                lines.append(f"{variant_id},{model_id},,,,")
    return "\n".join(lines) + "\n"


def emit_report(result: ExperimentResult, fmt: str, output_dir: Path) -> list[Path]:
    """Write metrics in the requested format; returns the written paths."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "markdown":
        path = output_dir / "metrics.md"
        path.write_text(render_metrics_markdown(result), encoding="utf-8")
        return [path]
    if fmt == "csv":
        path = output_dir / "metrics.csv"
        path.write_text(render_metrics_csv(result), encoding="utf-8")
        return [path]
    raise ValueError(f"unknown report format: {fmt}")


def persist_result(
    result: ExperimentResult, items: Sequence[LabeledDependency], output_dir: Path
) -> Path:
    """Write records.jsonl, metrics.md/csv, slot_usage.csv, and failures.csv."""
    run_dir = Path(output_dir) / result.run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    emit_report(result, "markdown", run_dir)
    emit_report(result, "csv", run_dir)
    with open(run_dir / "records.jsonl", "w", encoding="utf-8") as fh:
        for cell in result.cells:
            for record in cell.records:
                fh.write(json.dumps(record_to_dict(record), sort_keys=True) + "\n")
    usage_lines = ["rag_id,model,slot,source_kind,fraction"]
    for cell in result.cells:
        if cell.slot_usage is None:
            continue
        for slot, kind, fraction in cell.slot_usage.rows:
            usage_lines.append(f"{cell.rag_variant_id},{cell.model_id},{slot},{kind},{fraction!r}")
    (run_dir / "slot_usage.csv").write_text("\n".join(usage_lines) + "\n", encoding="utf-8")
    label_map = {item.candidate.id: item for item in items}
    failure_lines = ["rag_id,model,candidate_id,predicted,label,parse_status,failure_category"]
    for cell in result.cells:
        for record in cell.records:
            item = label_map.get(record.candidate_id)
            if item is None or not _is_failure(record, item.label):
                continue
            failure_lines.append(
                ",".join(
                    [
                        cell.rag_variant_id,
                        cell.model_id,
                        record.candidate_id,
                        str(record.verdict.is_dependency).lower(),
                        str(item.label).lower(),
                        record.verdict.parse_status,
                        item.failure_category or "",
                    ]
                )
            )
    (run_dir / "failures.csv").write_text("\n".join(failure_lines) + "\n", encoding="utf-8")
    return run_dir
