"""Topic models over bags of network activations or predicted object labels.

The package turns per-image activation vectors (or predicted-label lists)
into sparse count documents, fits either a categorical mixture model (EM)
or LDA (collapsed Gibbs sampling) on them, and evaluates the discovered
topics against withheld gold labels via density tables, purity and NMI.
"""

__version__ = "0.1.0"

from .errors import DegenerateTopicError, IngestError, LoadError

__all__ = [
    "__version__",
    "DegenerateTopicError",
    "IngestError",
    "LoadError",
]
