"""Exception types shared across the package.

Every error raised by ragdep derives from :class:`RagdepError`, so callers
(notably the CLI) can map failures to exit codes without enumerating
modules.
"""

from __future__ import annotations


class RagdepError(Exception):
    """Base class for all ragdep errors."""


# --- artifact parsing ------------------------------------------------------


class UnsupportedFormatError(RagdepError):
    """File name/extension does not identify a supported config format."""


class MalformedArtifactError(RagdepError):
    """A config artifact failed to parse; carries the offending line."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


# --- corpus / store --------------------------------------------------------


class MissingPathError(RagdepError):
    """A manifest entry points at a path that does not exist."""


class DuplicateIdError(RagdepError):
    """Two documents or dataset rows resolved to the same id."""


class DimensionMismatchError(RagdepError):
    """An embedding's length disagrees with the provider's declared dimension."""


class UnknownChunkError(RagdepError):
    """A chunk id was requested that is not present in the store."""


class EmptyStoreError(RagdepError):
    """Search was attempted against a store with no chunks."""


# --- retrieval -------------------------------------------------------------


class RewriteTwiceError(RagdepError):
    """rewrite_query was called on an already rewritten query."""


class SearchUnavailableError(RagdepError):
    """The web search client failed; validation proceeds on static context."""


# --- model gateway ---------------------------------------------------------


class ProviderUnavailableError(RagdepError):
    """A remote model/embedding provider failed after the retry budget."""


class ContextTooLongError(RagdepError):
    """Prompt exceeds the model's declared context length."""


class MalformedPromptError(RagdepError):
    """The mock model could not find the structured dependency block."""


# --- validator -------------------------------------------------------------


class TemplateMissingError(RagdepError):
    """A prompt template file is absent or lacks the required sections."""


class PlaceholderUnfilledError(RagdepError):
    """A prompt still contains an unsubstituted {placeholder} after rendering."""


class PoolTooSmallError(RagdepError):
    """The shot-example pool has fewer usable entries than requested."""


# --- evaluation ------------------------------------------------------------


class SchemaViolationError(RagdepError):
    """A dataset line failed validation; carries line number and field."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        super().__init__(message)
        self.line = line
        self.field = field


class MissingLabelError(RagdepError):
    """A validation record has no matching ground-truth label."""


class NotAFailureError(RagdepError):
    """Failure annotation was attempted on a correctly validated record."""


class EmptyMatrixError(RagdepError):
    """Metrics were requested for a confusion matrix with zero totals."""


class HoldoutLeakageError(RagdepError):
    """Holdout items were about to leak into shot pools or failure analysis."""


# --- configuration ---------------------------------------------------------


class RunConfigError(RagdepError):
    """The run-config file is invalid (unknown keys, missing fields, bad types)."""
