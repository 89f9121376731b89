"""Context corpus handling: documents, manifests, and sliding-window chunking.

A corpus manifest declares which files/directories feed the store and what
source kind they carry (manual, stackoverflow, github_repo, web_search,
project_info, shot_example). Documents are split into whitespace-token
windows of ``chunk_size`` with ``overlap`` shared tokens between
consecutive windows.
"""

from __future__ import annotations

import datetime as _dt
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from .embeddings import EmbeddingProvider, embed_batch
from .errors import DuplicateIdError, MissingPathError, RunConfigError

logger = logging.getLogger(__name__)

SOURCE_KINDS = (
    "manual",
    "stackoverflow",
    "github_repo",
    "web_search",
    "project_info",
    "shot_example",
)


@dataclass(frozen=True)
class Document:
    """A context text plus provenance metadata."""

    doc_id: str
    source_kind: str
    technology: Optional[str]
    origin: str
    title: Optional[str]
    text: str
    fetched_at: str = ""

    def __post_init__(self):
        if self.source_kind not in SOURCE_KINDS:
            raise ValueError(f"unknown source_kind: {self.source_kind}")
        if not self.text:
            raise ValueError(f"document {self.doc_id} has empty text")

    def source_fields(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "source_kind": self.source_kind,
            "technology": self.technology,
            "origin": self.origin,
            "title": self.title,
        }


@dataclass(frozen=True)
class ChunkerConfig:
    chunk_size: int = 512
    overlap: int = 50
    tokenizer: str = "whitespace"

    def __post_init__(self):
        if not (0 <= self.overlap < self.chunk_size):
            raise ValueError(f"need 0 <= overlap < chunk_size, got {self.overlap}/{self.chunk_size}")
        if self.tokenizer != "whitespace":
            raise ValueError(f"unsupported tokenizer: {self.tokenizer}")


@dataclass
class Chunk:
    """One embedded window of a document."""

    chunk_id: str
    doc_id: str
    window_index: int
    token_span: tuple[int, int]
    text: str
    embedding: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    source_kind: str
    technology: Optional[str] = None


@dataclass(frozen=True)
class CorpusManifest:
    entries: tuple[ManifestEntry, ...]


def load_manifest(path: Path) -> CorpusManifest:
    """Read a YAML manifest: {entries: [{path, source_kind, technology?}]}."""
    path = Path(path)
    if not path.is_file():
        raise MissingPathError(f"manifest not found: {path}")
    data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    raw_entries = data.get("entries")
    if not isinstance(raw_entries, list):
        raise RunConfigError(f"manifest {path} must contain an 'entries' list")
    entries = []
    for i, raw in enumerate(raw_entries):
        if not isinstance(raw, dict) or "path" not in raw or "source_kind" not in raw:
            raise RunConfigError(f"manifest entry #{i} needs 'path' and 'source_kind'")
        kind = str(raw["source_kind"])
        if kind not in SOURCE_KINDS:
            raise RunConfigError(f"manifest entry #{i}: unknown source_kind {kind!r}")
        entries.append(
            ManifestEntry(
                path=str(raw["path"]),
                source_kind=kind,
                technology=raw.get("technology"),
            )
        )
    return CorpusManifest(entries=tuple(entries))


def load_corpus(root: Path, manifest: CorpusManifest) -> list[Document]:
    """Load documents for every manifest entry, ordered by doc_id.

    One document per file; doc_id = manifest entry path plus the file's
    relative path inside it. Empty files are skipped with a warning.
    """
    root = Path(root)
    documents: dict[str, Document] = {}
    skipped = 0
    for entry in manifest.entries:
        target = root / entry.path
        if target.is_file():
            files = [(entry.path, target)]
        elif target.is_dir():
            files = [
                (f"{entry.path}/{p.relative_to(target).as_posix()}", p)
                for p in sorted(target.rglob("*"))
                if p.is_file()
            ]
        else:
            raise MissingPathError(f"manifest path does not exist: {target}")
        for doc_id, file_path in files:
            text = file_path.read_text(encoding="utf-8")
            if not text.strip():
                skipped += 1
                logger.warning("skipping empty document %s", file_path)
                continue
            if doc_id in documents:
                raise DuplicateIdError(f"duplicate doc_id from overlapping manifest entries: {doc_id}")
            mtime = _dt.datetime.fromtimestamp(file_path.stat().st_mtime, tz=_dt.timezone.utc)
            documents[doc_id] = Document(
                doc_id=doc_id,
                source_kind=entry.source_kind,
                technology=entry.technology,
                origin=file_path.as_posix(),
                title=file_path.stem,
                text=text,
                fetched_at=mtime.isoformat(),
            )
    if skipped:
        logger.warning("skipped %d empty documents", skipped)
    return [documents[doc_id] for doc_id in sorted(documents)]


def chunk_document(doc: Document, cfg: ChunkerConfig = ChunkerConfig()) -> list[Chunk]:
    """Window a document into (unembedded) chunks.

    Window starts advance by chunk_size - overlap; the final window may be
    shorter but is never emitted when its tokens are fully covered by the
    previous window.
    """
    tokens = doc.text.split()
    stride = cfg.chunk_size - cfg.overlap
    chunks: list[Chunk] = []
    start = 0
    while start < len(tokens):
        end = min(start + cfg.chunk_size, len(tokens))
        chunks.append(
            Chunk(
                chunk_id=f"{doc.doc_id}#{len(chunks)}",
                doc_id=doc.doc_id,
                window_index=len(chunks),
                token_span=(start, end),
                text=" ".join(tokens[start:end]),
                metadata=doc.source_fields(),
            )
        )
        if end == len(tokens):
            break
        start += stride
    return chunks


def embed_chunks(chunks: Sequence[Chunk], provider: EmbeddingProvider) -> list[Chunk]:
    """Fill chunk embeddings in place (and return the list)."""
    if not chunks:
        return list(chunks)
    vectors = embed_batch([c.text for c in chunks], provider)
    for chunk, vector in zip(chunks, vectors):
        chunk.embedding = vector
    return list(chunks)
