"""Prompt assembly, structured-verdict parsing, and the validation pipeline.

A validation prompt always consists of the same five sections in a fixed
order: system message, dependency definition, retrieved context,
validation instruction, and response format. Templates are plain-text
files with {placeholder} substitution; the base and refined variants
differ only in their dependency definition.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .confignet import DependencyCandidate
from .embeddings import EmbeddingProvider, cosine
from .errors import (
    PlaceholderUnfilledError,
    PoolTooSmallError,
    SearchUnavailableError,
    TemplateMissingError,
)
from .gateway import ModelConfig, ModelGateway, prompt_sha256
from .retrieval import (
    ContextSlots,
    FusionConfig,
    Reranker,
    build_query,
    dynamic_ingest,
    hybrid_search,
    rerank,
    rewrite_query,
    select_context,
)
from .store import HybridStore

SECTION_KINDS = (
    "system_message",
    "dependency_definition",
    "retrieved_context",
    "validation_instruction",
    "response_format",
)

EMPTY_CONTEXT_LINE = "No additional context provided."
RETRY_SUFFIX = "Respond with only the JSON object."

VERDICT_FIELDS = ("plan", "rationale", "uncertainty", "isDependency")

_SECTION_HEADER_RE = re.compile(r"^\[\[([a-z_]+)\]\]\s*$", re.MULTILINE)
_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")


@dataclass(frozen=True)
class PromptSection:
    kind: str
    text: str


@dataclass(frozen=True)
class Prompt:
    sections: tuple[PromptSection, ...]
    shot_examples: tuple[str, ...]
    variant: str

    def __post_init__(self):
        kinds = tuple(s.kind for s in self.sections)
        if kinds != SECTION_KINDS:
            raise ValueError(f"prompt must have the five fixed sections in order, got {kinds}")

    @property
    def text(self) -> str:
        return "\n\n".join(section.text for section in self.sections)

    @property
    def sha256(self) -> str:
        return prompt_sha256(self.text)

    def section(self, kind: str) -> str:
        return next(s.text for s in self.sections if s.kind == kind)


@dataclass(frozen=True)
class Verdict:
    plan: str
    rationale: str
    uncertainty: int
    is_dependency: bool
    parse_status: str  # ok | repaired | defaulted


DEFAULT_VERDICT = Verdict(plan="", rationale="", uncertainty=0, is_dependency=False, parse_status="defaulted")


@dataclass(frozen=True)
class ValidationRecord:
    """Full provenance of one validation."""

    candidate_id: str
    model_id: str
    rag_variant_id: str
    prompt_sha256: str
    context: ContextSlots
    verdict: Verdict
    wall_time_ms: float

    def __post_init__(self):
        if self.rag_variant_id == "w/o" and len(self.context) != 0:
            raise ValueError("vanilla records must carry empty context")
        if not (0 <= self.verdict.uncertainty <= 10):
            raise ValueError(f"uncertainty out of range: {self.verdict.uncertainty}")


@dataclass(frozen=True)
class ShotExample:
    """A labeled example pair used for few-shot prompting."""

    id: str
    summary: str
    label: bool
    embedding: Optional[np.ndarray] = None


# --- templates ---------------------------------------------------------------


def default_templates_dir() -> Path:
    return Path(resources.files("ragdep") / "templates")


def _template_path(variant: str, templates_dir: Optional[Path]) -> Path:
    name = {"base": "prompt_base.txt", "refined": "prompt_refined.txt"}.get(variant)
    if name is None:
        raise ValueError(f"unknown prompt variant: {variant}")
    directory = Path(templates_dir) if templates_dir else default_templates_dir()
    path = directory / name
    if not path.is_file():
        raise TemplateMissingError(f"prompt template not found: {path}")
    return path


def _parse_template(text: str, origin: Path) -> list[tuple[str, str]]:
    matches = list(_SECTION_HEADER_RE.finditer(text))
    kinds = tuple(m.group(1) for m in matches)
    if kinds != SECTION_KINDS:
        raise TemplateMissingError(
            f"{origin} must contain exactly the sections {SECTION_KINDS} in order, got {kinds}"
        )
    sections = []
    for match, nxt in zip(matches, list(matches[1:]) + [None]):
        end = nxt.start() if nxt else len(text)
        sections.append((match.group(1), text[match.end() : end].strip("\n")))
    return sections


def render_context(slots: ContextSlots) -> str:
    if len(slots) == 0:
        return EMPTY_CONTEXT_LINE
    blocks = [
        f"[Context {i} | {slot.source_kind}]\n{slot.text}"
        for i, slot in enumerate(slots.slots, start=1)
    ]
    return "\n\n".join(blocks)


def render_shots(shots: Sequence[ShotExample]) -> tuple[str, tuple[str, ...]]:
    if not shots:
        return "", ()
    rendered = tuple(
        f"Example {i} (isDependency={'true' if shot.label else 'false'}): {shot.summary}"
        for i, shot in enumerate(shots, start=1)
    )
    text = "Labeled examples of similar validated pairs:\n" + "\n".join(rendered)
    return text, rendered


def candidate_summary(candidate: DependencyCandidate) -> str:
    a, b = candidate.option_a, candidate.option_b
    return (
        f"{a.technology} option {a.name} (value {a.raw_value}) in {a.file_path} "
        f"and {b.technology} option {b.name} (value {b.raw_value}) in {b.file_path}"
    )


def build_prompt(
    candidate: DependencyCandidate,
    slots: ContextSlots,
    variant: str = "base",
    shots: Sequence[ShotExample] = (),
    templates_dir: Optional[Path] = None,
) -> Prompt:
    """Assemble the five-section validation prompt for a candidate."""
    if len(shots) not in (0, 2):
        raise ValueError(f"shots must contain 0 or 2 examples, got {len(shots)}")
    path = _template_path(variant, templates_dir)
    shot_text, shot_rendered = render_shots(shots)
    a, b = candidate.option_a, candidate.option_b
    values = {
        "project": a.project,
        "tech_a": a.technology,
        "file_a": a.file_path,
        "name_a": a.name,
        "value_a": a.raw_value,
        "tech_b": b.technology,
        "file_b": b.file_path,
        "name_b": b.name,
        "value_b": b.raw_value,
        "retrieved_context": render_context(slots),
        "shot_examples": shot_text,
    }
    sections = []
    for kind, template_text in _parse_template(path.read_text(encoding="utf-8"), path):
        rendered = _PLACEHOLDER_RE.sub(
            lambda m: values[m.group(1)] if m.group(1) in values else m.group(0),
            template_text,
        )
        leftover = _PLACEHOLDER_RE.search(rendered)
        if leftover:
            raise PlaceholderUnfilledError(
                f"{path}: no value for placeholder {{{leftover.group(1)}}} in section {kind}"
            )
        sections.append(PromptSection(kind=kind, text=rendered.strip("\n").rstrip()))
    return Prompt(sections=tuple(sections), shot_examples=shot_rendered, variant=variant)


# --- few-shot selection -------------------------------------------------------


def select_shots(
    candidate: DependencyCandidate,
    pool: Sequence[ShotExample],
    provider: EmbeddingProvider,
    n: int = 2,
) -> list[ShotExample]:
    """Pick the n most similar labeled examples by summary cosine.

    The candidate's own id is always excluded before ranking; ties break
    on example id.
    """
    if n == 0:
        return []
    usable = [shot for shot in pool if shot.id != candidate.id]
    if len(usable) < n:
        raise PoolTooSmallError(f"need {n} shot examples, pool has {len(usable)} usable")
    query_vector = provider.embed_one(candidate_summary(candidate))
    scored = []
    for shot in usable:
        embedding = shot.embedding
        if embedding is None or len(embedding) != provider.dimension:
            embedding = provider.embed_one(shot.summary)
        scored.append((cosine(query_vector, embedding), shot))
    scored.sort(key=lambda item: (-item[0], item[1].id))
    return [shot for _, shot in scored[:n]]


# --- verdict parsing ----------------------------------------------------------


def _first_balanced_object(text: str) -> Optional[str]:
    """Extract the first balanced {...} substring, aware of JSON strings."""
    depth = 0
    start = None
    in_string = False
    escaped = False
    for i, ch in enumerate(text):
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            if depth > 0:
                in_string = True
        elif ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}" and depth > 0:
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    return None


def _verdict_from_object(obj: object, allow_coercion: bool) -> Optional[Verdict]:
    if not isinstance(obj, dict):
        return None
    if any(key not in obj for key in VERDICT_FIELDS):
        return None
    plan, rationale = obj["plan"], obj["rationale"]
    uncertainty, is_dependency = obj["uncertainty"], obj["isDependency"]
    if not isinstance(plan, str) or not isinstance(rationale, str):
        return None
    if allow_coercion and isinstance(uncertainty, str) and re.fullmatch(r"[+-]?\d+", uncertainty.strip()):
        uncertainty = int(uncertainty.strip())
    if isinstance(uncertainty, bool) or not isinstance(uncertainty, int):
        return None
    if not (0 <= uncertainty <= 10):
        return None
    if not isinstance(is_dependency, bool):
        return None
    return Verdict(
        plan=plan,
        rationale=rationale,
        uncertainty=uncertainty,
        is_dependency=is_dependency,
        parse_status="repaired" if allow_coercion else "ok",
    )


def parse_verdict(text: str) -> Verdict:
    """Parse a model response into a Verdict; never raises.

    Strict pass: the whole text is a JSON object with the four required
    fields and correct types. Repair pass: the first balanced {...}
    substring, with numeric-string uncertainty accepted. Anything else
    defaults to a negative verdict with uncertainty 0.
    """
    try:
        verdict = _verdict_from_object(json.loads(text), allow_coercion=False)
        if verdict is not None:
            return verdict
    except (json.JSONDecodeError, RecursionError, ValueError):
        pass
    snippet = _first_balanced_object(text)
    if snippet is not None:
        try:
            verdict = _verdict_from_object(json.loads(snippet), allow_coercion=True)
            if verdict is not None:
                return verdict
        except (json.JSONDecodeError, RecursionError, ValueError):
            pass
    return DEFAULT_VERDICT


# --- pipeline -----------------------------------------------------------------


@dataclass
class PipelineSettings:
    """Knobs shared by every validation in a run."""

    k_dense: int = 50
    k_sparse: int = 50
    fusion: FusionConfig = field(default_factory=FusionConfig)
    rewrite_mode: str = "template"
    vanilla_prompt_variant: str = "base"
    scope_dynamic_context: bool = False


class ValidationPipeline:
    """Drives one candidate through retrieval, prompting, and parsing."""

    def __init__(
        self,
        gateway: ModelGateway,
        templates_dir: Optional[Path] = None,
        search_client=None,
        shot_pool: Sequence[ShotExample] = (),
        settings: PipelineSettings = PipelineSettings(),
    ):
        self.gateway = gateway
        self.templates_dir = templates_dir
        self.search_client = search_client
        self.shot_pool = list(shot_pool)
        self.settings = settings

    def validate_candidate(
        self,
        candidate: DependencyCandidate,
        model_cfg: ModelConfig,
        variant=None,
        store: Optional[HybridStore] = None,
    ) -> ValidationRecord:
        """Validate one candidate; variant None, or variant.id == "w/o", is vanilla.

        RAG runs compose dynamic ingestion (when enabled), query building
        and rewriting, hybrid search, re-ranking, context selection,
        optional shot selection, prompting, and verdict parsing. A
        defaulted parse triggers exactly one retry asking for bare JSON.
        """
        started = time.perf_counter()
        vanilla = variant is None or getattr(variant, "id", None) == "w/o"
        shots: list[ShotExample] = []
        if vanilla:
            slots = ContextSlots()
            prompt_variant = (
                getattr(variant, "prompt_variant", None) or self.settings.vanilla_prompt_variant
            )
            variant_id = "w/o"
        else:
            if store is None:
                raise ValueError(f"variant {variant.id} needs a populated store")
            if variant.dynamic_context and self.search_client is not None:
                try:
                    dynamic_ingest(candidate, self.search_client, store)
                except SearchUnavailableError as exc:
                    self.gateway._log(model_cfg.model_id, "-", 0.0, f"search unavailable: {exc}", 0)
            query = rewrite_query(
                build_query(candidate),
                mode=self.settings.rewrite_mode,
                gateway=self.gateway,
                model_cfg=model_cfg,
            )
            scope = candidate.id if self.settings.scope_dynamic_context else None
            ranked = hybrid_search(
                store,
                query,
                k_dense=self.settings.k_dense,
                k_sparse=self.settings.k_sparse,
                fusion=self.settings.fusion,
                scope_candidate_id=scope,
            )
            if ranked:
                ranked = rerank(store, ranked, query, Reranker(variant.reranker))
            slots = select_context(store, ranked, variant.top_n)
            if variant.shots:
                shots = select_shots(candidate, self.shot_pool, store.provider, n=variant.shots)
            prompt_variant = variant.prompt_variant
            variant_id = variant.id
        prompt = build_prompt(
            candidate, slots, variant=prompt_variant, shots=shots, templates_dir=self.templates_dir
        )
        completion = self.gateway.complete(prompt.text, model_cfg)
        verdict = parse_verdict(completion.text)
        if verdict.parse_status == "defaulted":
            retry = self.gateway.complete(f"{prompt.text}\n{RETRY_SUFFIX}", model_cfg)
            retried = parse_verdict(retry.text)
            if retried.parse_status != "defaulted":
                verdict = retried
        return ValidationRecord(
            candidate_id=candidate.id,
            model_id=model_cfg.model_id,
            rag_variant_id=variant_id,
            prompt_sha256=prompt.sha256,
            context=slots,
            verdict=verdict,
            wall_time_ms=(time.perf_counter() - started) * 1000.0,
        )


# --- record wire format --------------------------------------------------------


def record_to_dict(record: ValidationRecord) -> dict:
    return {
        "candidate_id": record.candidate_id,
        "model_id": record.model_id,
        "rag_variant_id": record.rag_variant_id,
        "prompt_sha256": record.prompt_sha256,
        "context": [
            {"chunk_id": s.chunk_id, "source_kind": s.source_kind, "text": s.text}
            for s in record.context.slots
        ],
        "top_n": record.context.top_n,
        "verdict": {
            "plan": record.verdict.plan,
            "rationale": record.verdict.rationale,
            "uncertainty": record.verdict.uncertainty,
            "isDependency": record.verdict.is_dependency,
            "parse_status": record.verdict.parse_status,
        },
        "wall_time_ms": record.wall_time_ms,
    }


def record_from_dict(data: dict) -> ValidationRecord:
    from .retrieval import ContextSlot  # local to keep import surface small

    verdict = data["verdict"]
    return ValidationRecord(
        candidate_id=data["candidate_id"],
        model_id=data["model_id"],
        rag_variant_id=data["rag_variant_id"],
        prompt_sha256=data["prompt_sha256"],
        context=ContextSlots(
            slots=tuple(
                ContextSlot(chunk_id=s["chunk_id"], source_kind=s["source_kind"], text=s["text"])
                for s in data.get("context", [])
            ),
            top_n=data.get("top_n", len(data.get("context", []))),
        ),
        verdict=Verdict(
            plan=verdict["plan"],
            rationale=verdict["rationale"],
            uncertainty=verdict["uncertainty"],
            is_dependency=verdict["isDependency"],
            parse_status=verdict.get("parse_status", "ok"),
        ),
        wall_time_ms=data.get("wall_time_ms", 0.0),
    )
