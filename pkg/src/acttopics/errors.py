"""Exception types shared across the package."""


class IngestError(ValueError):
    """Malformed input data encountered while building a corpus.

    Messages name the offending doc_id and, for file input, the line number.
    """


class LoadError(ValueError):
    """A saved corpus/model file is unreadable: bad version, truncation,
    or a value violating an invariant. Messages carry the line number."""


class DegenerateTopicError(ArithmeticError):
    """A topic collapsed during fitting (zero responsibility mass with no
    smoothing to rescue it)."""
