"""Directory -> feature-file extraction, model-agnostic.

The model object supplies batched activations or class scores (see
``models.FeatureModel``); this module owns file discovery, decoding, gold
label lookup and the output formats. Records are emitted in sorted filename
order so runs are reproducible; undecodable images are skipped with a
warning and listed in a ``<out>.skipped.txt`` sidecar. Images are decoded
and run through the model one batch at a time.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

logger = logging.getLogger(__name__)

ABSENT_LABEL = "-"
MODES = ("labels", "acts")


@dataclass(frozen=True)
class ExtractJob:
    images_dir: str
    mode: str  # "labels" or "acts"
    out: str
    layer: str = "block5_pool"  # activations mode; recorded in the file header
    k: int = 10                 # labels mode: top-k classes per image
    labels_csv: str | None = None  # optional filename -> gold label map
    batch_size: int = 16


@dataclass(frozen=True)
class ExtractResult:
    out: str
    n_images: int
    n_skipped: int
    sidecar: str | None


def _load_gold_map(path: str) -> dict:
    gold = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'filename,label', got {row!r}")
            name, label = row[0].strip(), row[1].strip()
            if not label or label == ABSENT_LABEL or "\t" in label:
                raise ValueError(f"{path}:{lineno}: bad gold label {label!r}")
            gold[name] = label
    return gold


def _check_surface(surface: str) -> str:
    if "|" in surface or "\t" in surface or "\n" in surface:
        raise ValueError(f"class name {surface!r} contains a reserved character")
    return surface


def _top_k_indices(scores: np.ndarray, k: int) -> np.ndarray:
    # descending score, ties to the lower class index (stable sort)
    return np.argsort(-scores, kind="stable")[: min(k, scores.shape[0])]


class _RecordWriter:
    """Accumulates output lines; the actfile header is fixed by the first
    batch's activation dimension."""

    def __init__(self, job: ExtractJob, model, gold: dict):
        self.job = job
        self.model = model
        self.gold = gold
        self.records = []
        self.dim = None
        if job.mode == "labels":
            self.class_names = [_check_surface(c) for c in model.class_names]

    def add_batch(self, names, images):
        if self.job.mode == "labels":
            scores = np.asarray(self.model.class_scores(images), dtype=np.float64)
            if scores.shape != (len(images), len(self.class_names)):
                raise ValueError(
                    f"model returned scores of shape {scores.shape} for "
                    f"{len(images)} images and {len(self.class_names)} classes")
            for name, row in zip(names, scores):
                if not np.all(np.isfinite(row)):
                    raise ValueError(f"{name}: non-finite class score")
                surfaces = [self.class_names[i].lower()
                            for i in _top_k_indices(row, self.job.k)]
                self.records.append((name, "|".join(surfaces)))
        else:
            acts = np.asarray(self.model.activations(images), dtype=np.float64)
            if acts.ndim != 2 or acts.shape[0] != len(images):
                raise ValueError(f"model returned activations of shape {acts.shape}")
            if self.dim is None:
                self.dim = acts.shape[1]
            elif acts.shape[1] != self.dim:
                raise ValueError("model returned inconsistent activation dims")
            for name, row in zip(names, acts):
                if not np.all(np.isfinite(row)):
                    raise ValueError(f"{name}: non-finite activation")
                # zeros are dropped: the flattened layer output is mostly
                # post-ReLU zeros and absent units read as 0 downstream
                hot = np.flatnonzero(row > 0)
                self.records.append(
                    (name, " ".join(f"{int(i)}:{row[i]:.8g}" for i in hot)))

    def write(self) -> None:
        if self.job.mode == "labels":
            header = f"#labfile v1 source={self.model.name}"
        else:
            dim = self.dim if self.dim is not None else getattr(self.model, "dim", 0)
            header = f"#actfile v1 layer={self.model.layer} dim={dim}"
        lines = [header]
        for name, payload in self.records:
            lines.append(f"{name}\t{self.gold.get(name, ABSENT_LABEL)}\t{payload}")
        with open(self.job.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")


def run_extract(job: ExtractJob, model) -> ExtractResult:
    """Run the model over every decodable image and write the feature file."""
    if job.mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {job.mode!r}")
    if job.mode == "labels" and job.k < 1:
        raise ValueError(f"k must be >= 1, got {job.k}")
    if job.batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {job.batch_size}")
    root = Path(job.images_dir)
    if not root.is_dir():
        raise ValueError(f"{job.images_dir!r} is not a directory")
    gold = _load_gold_map(job.labels_csv) if job.labels_csv else {}
    writer = _RecordWriter(job, model, gold)

    skipped = []
    batch_names, batch_images = [], []

    def flush():
        if batch_names:
            writer.add_batch(batch_names, batch_images)
            batch_names.clear()
            batch_images.clear()

    for path in sorted(p for p in root.iterdir()
                       if p.is_file() and not p.name.startswith(".")):
        try:
            with Image.open(path) as img:
                decoded = img.convert("RGB")
        except (UnidentifiedImageError, OSError) as exc:
            logger.warning("skipping %s: %s", path.name, exc)
            skipped.append((path.name, str(exc)))
            continue
        batch_names.append(path.name)
        batch_images.append(decoded)
        if len(batch_names) == job.batch_size:
            flush()
    flush()
    writer.write()

    sidecar = None
    if skipped:
        sidecar = job.out + ".skipped.txt"
        with open(sidecar, "w", encoding="utf-8", newline="\n") as fh:
            for name, reason in skipped:
                fh.write(f"{name}\t{reason}\n")
    return ExtractResult(job.out, len(writer.records), len(skipped), sidecar)
