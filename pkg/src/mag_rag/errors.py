"""Error types for MAG-RAG.

Every error carries a short machine-greppable ``code`` that the CLI prints
as ``error[<code>]: <message>``.
"""

from __future__ import annotations

from typing import Any, Sequence


class MagRagError(Exception):
    """Base class for all MAG-RAG errors."""

    code = "E_MAGRAG"


class PreconditionError(MagRagError, ValueError):
    """An operation was called with arguments violating its contract."""

    code = "E_PRECONDITION"


class ConfigError(MagRagError):
    """Invalid or incomplete configuration."""

    code = "E_CONFIG"


class StorageError(MagRagError):
    """A graph, result or report file could not be read or written."""

    code = "E_IO"

    def __init__(self, path: str, reason: str):
        super().__init__(f"cannot access {path}: {reason}")
        self.path = path


# --- providers ---


class TransportError(MagRagError):
    """Network or HTTP failure that persisted after all retries."""

    code = "E_TRANSPORT"

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class TransientError(MagRagError):
    """A retryable backend failure (raised by provider backends, not by callers)."""

    code = "E_TRANSIENT"


class EmptyCompletion(MagRagError):
    """The chat backend returned no text."""

    code = "E_EMPTY_COMPLETION"


class DimensionMismatch(MagRagError):
    """Vector lengths disagree."""

    code = "E_DIMENSION_MISMATCH"


class InvalidEmbedding(MagRagError):
    """Embedding contains non-finite values."""

    code = "E_INVALID_EMBEDDING"


class ZeroVector(MagRagError):
    """Cosine similarity is undefined for a zero vector."""

    code = "E_ZERO_VECTOR"


# --- corpus ---


class EmptyCorpus(MagRagError):
    code = "E_EMPTY_CORPUS"


class UnreadableFile(MagRagError):
    code = "E_UNREADABLE_FILE"

    def __init__(self, path: str, reason: str):
        super().__init__(f"cannot read {path}: {reason}")
        self.path = path


class MalformedCompletion(MagRagError):
    """An extraction completion is missing one or more canonical sections."""

    code = "E_MALFORMED_COMPLETION"

    def __init__(self, missing: Sequence[str], raw: str = ""):
        super().__init__(f"missing sections: {', '.join(missing)}")
        self.missing = list(missing)
        self.raw = raw


# --- graph store ---


class DuplicateDocument(MagRagError):
    code = "E_DUPLICATE_DOCUMENT"


class EmbeddingFailure(MagRagError):
    code = "E_EMBEDDING_FAILURE"

    def __init__(self, node_id: str, cause: BaseException):
        super().__init__(f"embedding failed for node {node_id}: {cause}")
        self.node_id = node_id
        self.cause = cause


class SchemaVersionMismatch(MagRagError):
    code = "E_SCHEMA_VERSION"


class CorruptFile(MagRagError):
    code = "E_CORRUPT_FILE"

    def __init__(self, path: str, line: int, reason: str):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line


class UnknownNode(MagRagError):
    code = "E_UNKNOWN_NODE"


# --- retrieval ---


class WrongLayer(MagRagError):
    code = "E_WRONG_LAYER"


class EmptyGraph(MagRagError):
    code = "E_EMPTY_GRAPH"


class BrokenChain(MagRagError):
    code = "E_BROKEN_CHAIN"


# --- pipeline ---


class StageError(MagRagError):
    """A pipeline or build stage failed; keeps whatever trace was recorded."""

    code = "E_STAGE"

    def __init__(
        self,
        stage: str,
        cause: BaseException,
        trace: Sequence[Any] = (),
        doc_id: str | None = None,
    ):
        where = f" for document '{doc_id}'" if doc_id else ""
        super().__init__(f"stage '{stage}' failed{where}: {cause}")
        self.stage = stage
        self.cause = cause
        self.trace = list(trace)
        self.doc_id = doc_id
        if isinstance(cause, MagRagError):
            self.code = cause.code


class ResultFormatError(MagRagError):
    code = "E_RESULT_FORMAT"


# --- evaluation ---


class MalformedJudgment(MagRagError):
    code = "E_MALFORMED_JUDGMENT"

    def __init__(self, missing: Sequence[str], raw: str = ""):
        super().__init__(f"judgment missing metrics: {', '.join(missing)}")
        self.missing = list(missing)
        self.raw = raw


class RaggedTable(MagRagError):
    code = "E_RAGGED_TABLE"


class NonNumericCell(MagRagError):
    code = "E_NON_NUMERIC_CELL"

    def __init__(self, row: str, column: str, value: str):
        super().__init__(f"non-numeric cell ({row}, {column}): {value!r}")
        self.row = row
        self.column = column


class DuplicateLabel(MagRagError):
    code = "E_DUPLICATE_LABEL"


class IncompleteGrouping(MagRagError):
    code = "E_INCOMPLETE_GROUPING"
