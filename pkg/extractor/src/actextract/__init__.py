"""Feature extraction from pretrained image models.

Walks an image directory in sorted filename order, runs a pretrained CNN,
and writes either top-layer activations (`#actfile v1`) or top-K predicted
class labels (`#labfile v1`) in the formats the `acttopics` package ingests.
Inference only; no training.
"""

__version__ = "0.1.0"

from .extract import ExtractJob, ExtractResult, run_extract

__all__ = ["__version__", "ExtractJob", "ExtractResult", "run_extract"]
