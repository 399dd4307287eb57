"""Exception types shared across the package.

Plain I/O failures (unreadable paths, permissions) surface as the builtin
OSError family; everything with domain meaning gets a named class here so
callers can catch precisely.
"""

from __future__ import annotations


class EmptyInput(ValueError):
    """A text operation received empty input where content is required."""


class MissingSection(ValueError):
    """A required judgment section could not be located."""

    def __init__(self, section: str, detail: str = ""):
        self.section = section
        super().__init__(f"missing required section '{section}'" + (f": {detail}" if detail else ""))


class FormatError(ValueError):
    """A persisted file is malformed. Carries the offending location."""

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:" + (f"{line}: " if line is not None else " ")
        super().__init__(where + message)


class EmptyCorpus(ValueError):
    """An operation that needs documents was given none."""


class UnknownDoc(KeyError):
    """A document id is not present in the referenced store or index."""


class EmptyGold(ValueError):
    """A recall/precision computation was given an empty gold set."""


class MissingGold(ValueError):
    """A metric requires a gold value that is absent."""


class EmptyReference(ValueError):
    """Token-overlap scoring requires a non-empty reference text."""


class SchemaMismatch(ValueError):
    """Per-case records disagree on their metric schema."""


class RewriterUnavailable(RuntimeError):
    """The external rewriting service could not be reached."""


class ScorerUnavailable(RuntimeError):
    """The external embedding service could not be reached."""


class ContextOverflow(ValueError):
    """Token count exceeds the model context length."""


class AllMasked(ValueError):
    """No position contributes to the loss."""


class NoTrace(RuntimeError):
    """Backward was called without a recorded forward trace."""


class BadRank(ValueError):
    """Adapter rank outside the valid range for the host matrices."""


class EmptyTrainingSet(ValueError):
    """Adapter training requires at least one QA pair."""


class ConfigMismatch(ValueError):
    """Adapter/delta configuration is incompatible with the target model."""


class VersionMismatch(ValueError):
    """Persisted file uses an unsupported format version."""


class ChecksumFailure(ValueError):
    """Persisted payload failed its integrity check."""


class RetrievalEmpty(ValueError):
    """A retrieval step produced no candidates when some were required."""
