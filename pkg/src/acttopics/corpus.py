"""Corpora of sparse bag-of-token documents.

One image is one document: a sparse map from token id to count, plus an
optional gold label kept only for evaluation. Tokens are either thresholded
activation units ("unit_4817") or predicted object names ("wine bottle").

File formats (text, UTF-8, one record per line, `-` = absent gold label):

  activation file   #actfile v1 layer=<name> dim=<D>
                    doc_id<TAB>gold_or_-<TAB>idx:value idx:value ...
  label file        #labfile v1 source=<name>
                    doc_id<TAB>gold_or_-<TAB>surface|surface|...
  corpus file       #corpus v1 V=<V> D=<num_docs>
                    V lines  <id><TAB><surface>
                    D lines  doc_id<TAB>gold_or_-<TAB>id:count id:count ...
                    then     #meta key=value
"""

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import IngestError, LoadError

ABSENT_LABEL = "-"


def _check_field(text: str, what: str, context: str) -> None:
    if not text:
        raise IngestError(f"{context}: empty {what}")
    if "\t" in text or "\n" in text or "\r" in text:
        raise IngestError(f"{context}: {what} {text!r} contains tab/newline")
    if what == "gold label" and text == ABSENT_LABEL:
        raise IngestError(f"{context}: gold label {ABSENT_LABEL!r} is reserved for absent")


@dataclass(frozen=True)
class Token:
    """A vocabulary entry: dense id plus its surface string."""

    id: int
    surface: str


class Vocabulary:
    """Bidirectional token-string <-> token-id map.

    Ids are dense (0..V-1) and assigned in first-occurrence order, so the
    mapping is deterministic given the input order. Immutable once built.
    """

    __slots__ = ("_surfaces", "_ids")

    def __init__(self, surfaces: Iterable[str] = ()):
        self._surfaces = tuple(surfaces)
        self._ids = {s: i for i, s in enumerate(self._surfaces)}
        if len(self._ids) != len(self._surfaces):
            raise ValueError("duplicate surface strings in vocabulary")
        for s in self._surfaces:
            _check_field(s, "surface", "vocabulary")

    def __len__(self) -> int:
        return len(self._surfaces)

    def __iter__(self) -> Iterator[Token]:
        return (Token(i, s) for i, s in enumerate(self._surfaces))

    def __contains__(self, surface: str) -> bool:
        return surface in self._ids

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self._surfaces == other._surfaces

    def __repr__(self) -> str:
        return f"Vocabulary({len(self)} tokens)"

    @property
    def surfaces(self) -> tuple:
        return self._surfaces

    def id_of(self, surface: str) -> int:
        return self._ids[surface]

    def surface_of(self, token_id: int) -> str:
        return self._surfaces[token_id]


@dataclass(frozen=True)
class FeatureDoc:
    """One image as a sparse bag of token counts plus optional gold label."""

    doc_id: str
    gold_label: str | None
    counts: Mapping[int, int]

    def __post_init__(self):
        for tok, cnt in self.counts.items():
            if cnt < 1:
                raise ValueError(f"doc {self.doc_id!r}: count {cnt} for token {tok} (must be >= 1)")
            if tok < 0:
                raise ValueError(f"doc {self.doc_id!r}: negative token id {tok}")

    def __len__(self) -> int:
        """Total token count of the document."""
        return sum(self.counts.values())

    @property
    def empty(self) -> bool:
        return not self.counts


@dataclass(frozen=True)
class RawActivationRecord:
    """Pre-threshold activations of one image at one fixed layer."""

    doc_id: str
    gold_label: str | None
    values: tuple  # ((unit_index, activation), ...) with strictly increasing indices

    def validate(self, context: str = "") -> None:
        ctx = context or f"record {self.doc_id!r}"
        prev = -1
        for idx, val in self.values:
            if idx <= prev:
                raise IngestError(f"{ctx}: unit index {idx} not strictly increasing")
            if not math.isfinite(val):
                raise IngestError(f"{ctx}: non-finite activation {val!r} at unit {idx}")
            prev = idx


@dataclass(frozen=True)
class Corpus:
    """Immutable collection of documents sharing one vocabulary.

    ``meta`` records provenance (source layer, threshold or top-K, how many
    documents came out empty). Safe to share across threads.
    """

    vocabulary: Vocabulary
    docs: tuple
    meta: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        nv = len(self.vocabulary)
        for doc in self.docs:
            if doc.doc_id in seen:
                raise ValueError(f"duplicate doc_id {doc.doc_id!r}")
            seen.add(doc.doc_id)
            for tok in doc.counts:
                if tok >= nv:
                    raise ValueError(
                        f"doc {doc.doc_id!r}: token id {tok} out of range for V={nv}"
                    )

    def __len__(self) -> int:
        return len(self.docs)

    @property
    def num_tokens(self) -> int:
        return sum(len(d) for d in self.docs)

    def non_empty_docs(self) -> tuple:
        return tuple(d for d in self.docs if not d.empty)


# ---------------------------------------------------------------------------
# featurization


def threshold_activations(records: Iterable[RawActivationRecord], threshold: float) -> Corpus:
    """Binarize activation records: unit j fires iff its value is strictly
    greater than ``threshold``.

    Fired units become tokens ``unit_<j>`` with count 1. The vocabulary holds
    exactly the units that fired in at least one record, in first-fired order.
    Documents where nothing fired are kept (they still carry gold labels) and
    their number is recorded in ``meta["empty_docs"]``.
    """
    if not math.isfinite(threshold):
        raise IngestError(f"threshold must be finite, got {threshold!r}")
    surfaces: list[str] = []
    ids: dict[str, int] = {}
    docs = []
    seen_ids = set()
    n_empty = 0
    for rec in records:
        rec.validate()
        if rec.doc_id in seen_ids:
            raise IngestError(f"record {rec.doc_id!r}: duplicate doc_id")
        seen_ids.add(rec.doc_id)
        counts = {}
        for idx, val in rec.values:
            if val > threshold:
                surface = f"unit_{idx}"
                tok = ids.get(surface)
                if tok is None:
                    tok = len(surfaces)
                    ids[surface] = tok
                    surfaces.append(surface)
                counts[tok] = 1
        if not counts:
            n_empty += 1
        docs.append(FeatureDoc(rec.doc_id, rec.gold_label, counts))
    meta = {"threshold": f"{threshold:.17g}", "empty_docs": str(n_empty)}
    return Corpus(Vocabulary(surfaces), tuple(docs), meta)


def top_k_labels(scores: Sequence[float], k: int, class_names: Sequence[str]) -> list:
    """Class names of the k largest scores, descending, ties to the lower
    class index. k is clamped to the score dimension."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(scores) != len(class_names) or not class_names:
        raise ValueError(
            f"scores ({len(scores)}) and class_names ({len(class_names)}) must have equal nonzero length"
        )
    for s in scores:
        if not math.isfinite(s):
            raise IngestError(f"non-finite score {s!r}")
    # sort by (-score, index); sorted() is stable so equal scores keep index order
    order = sorted(range(len(scores)), key=lambda i: -float(scores[i]))
    return [class_names[i] for i in order[: min(k, len(scores))]]


def build_corpus_from_label_docs(docs: Iterable[tuple], meta: Mapping[str, str] | None = None) -> Corpus:
    """Build a corpus from (doc_id, gold_label, [surface, ...]) triples.

    The vocabulary is built in first-occurrence order; repeated surfaces
    within one document accumulate into the count.
    """
    surfaces: list[str] = []
    ids: dict[str, int] = {}
    out = []
    seen = set()
    n_empty = 0
    for doc_id, gold, doc_surfaces in docs:
        if doc_id in seen:
            raise IngestError(f"record {doc_id!r}: duplicate doc_id")
        seen.add(doc_id)
        counts: dict[int, int] = {}
        for surface in doc_surfaces:
            tok = ids.get(surface)
            if tok is None:
                _check_field(surface, "surface", f"record {doc_id!r}")
                tok = len(surfaces)
                ids[surface] = tok
                surfaces.append(surface)
            counts[tok] = counts.get(tok, 0) + 1
        if not counts:
            n_empty += 1
        out.append(FeatureDoc(doc_id, gold, counts))
    full_meta = dict(meta) if meta else {}
    full_meta["empty_docs"] = str(n_empty)
    return Corpus(Vocabulary(surfaces), tuple(out), full_meta)


# ---------------------------------------------------------------------------
# feature file parsing


def _split_record_line(line: str, lineno: int, path: str) -> tuple:
    parts = line.split("\t")
    if len(parts) != 3:
        raise IngestError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
    doc_id, gold, payload = parts
    _check_field(doc_id, "doc_id", f"{path}:{lineno}")
    if gold == ABSENT_LABEL:
        gold_label = None
    else:
        _check_field(gold, "gold label", f"{path}:{lineno}")
        gold_label = gold
    return doc_id, gold_label, payload


def read_actfile(path: str) -> tuple:
    """Read an activation file. Returns (layer, dim, records)."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        tokens = header.split()
        if len(tokens) != 4 or tokens[0] != "#actfile" or tokens[1] != "v1" \
                or not tokens[2].startswith("layer=") or not tokens[3].startswith("dim="):
            raise IngestError(f"{path}:1: bad header {header!r}, expected '#actfile v1 layer=<name> dim=<D>'")
        layer = tokens[2][len("layer="):]
        try:
            dim = int(tokens[3][len("dim="):])
        except ValueError:
            raise IngestError(f"{path}:1: bad dim in header {header!r}") from None
        if dim < 0:
            raise IngestError(f"{path}:1: negative dim {dim}")
        records = []
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\n")
            if not line:
                continue
            doc_id, gold, payload = _split_record_line(line, lineno, path)
            values = []
            for piece in payload.split():
                idx_s, _, val_s = piece.partition(":")
                try:
                    idx = int(idx_s)
                    val = float(val_s)
                except ValueError:
                    raise IngestError(
                        f"{path}:{lineno}: doc {doc_id!r}: bad idx:value pair {piece!r}"
                    ) from None
                if idx < 0 or idx >= dim:
                    raise IngestError(
                        f"{path}:{lineno}: doc {doc_id!r}: unit index {idx} outside dim={dim}"
                    )
                values.append((idx, val))
            rec = RawActivationRecord(doc_id, gold, tuple(values))
            rec.validate(f"{path}:{lineno}: doc {doc_id!r}")
            records.append(rec)
    return layer, dim, records


def read_labfile(path: str) -> tuple:
    """Read a label file. Returns (source, [(doc_id, gold, [surface, ...]), ...])."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        tokens = header.split()
        if len(tokens) != 3 or tokens[0] != "#labfile" or tokens[1] != "v1" \
                or not tokens[2].startswith("source="):
            raise IngestError(f"{path}:1: bad header {header!r}, expected '#labfile v1 source=<name>'")
        source = tokens[2][len("source="):]
        docs = []
        for lineno, raw in enumerate(fh, start=2):
            line = raw.rstrip("\n")
            if not line:
                continue
            doc_id, gold, payload = _split_record_line(line, lineno, path)
            surfaces = payload.split("|") if payload else []
            for s in surfaces:
                if not s:
                    raise IngestError(f"{path}:{lineno}: doc {doc_id!r}: empty surface")
            docs.append((doc_id, gold, surfaces))
    return source, docs


def corpus_from_actfile(path: str, threshold: float) -> Corpus:
    layer, dim, records = read_actfile(path)
    corpus = threshold_activations(records, threshold)
    meta = dict(corpus.meta)
    meta.update(source="actfile", layer=layer, dim=str(dim))
    return Corpus(corpus.vocabulary, corpus.docs, meta)


def corpus_from_actfile_topk(path: str, k: int, class_names: Sequence[str] | None = None) -> Corpus:
    """Treat each activation record as a dense score vector (absent units
    score 0) and keep the top-k classes as binary tokens."""
    layer, dim, records = read_actfile(path)
    if dim < 1:
        raise IngestError(f"{path}: top-k featurization needs dim >= 1, header has dim={dim}")
    if class_names is None:
        class_names = [f"class_{i}" for i in range(dim)]
    elif len(class_names) != dim:
        raise IngestError(
            f"{path}: {len(class_names)} class names for dim={dim}"
        )
    label_docs = []
    for rec in records:
        scores = [0.0] * dim
        for idx, val in rec.values:
            scores[idx] = val
        label_docs.append((rec.doc_id, rec.gold_label, top_k_labels(scores, k, class_names)))
    meta = {"source": "actfile", "layer": layer, "dim": str(dim), "top_k": str(k)}
    return build_corpus_from_label_docs(label_docs, meta)


def corpus_from_labfile(path: str) -> Corpus:
    source, docs = read_labfile(path)
    return build_corpus_from_label_docs(docs, {"source": "labfile", "source_name": source})


# ---------------------------------------------------------------------------
# corpus serialization


def save_corpus(corpus: Corpus, path: str) -> None:
    """Write a corpus file. Deterministic: same corpus, same bytes."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#corpus v1 V={len(corpus.vocabulary)} D={len(corpus.docs)}\n")
        for tok in corpus.vocabulary:
            fh.write(f"{tok.id}\t{tok.surface}\n")
        for doc in corpus.docs:
            gold = doc.gold_label if doc.gold_label is not None else ABSENT_LABEL
            payload = " ".join(f"{t}:{c}" for t, c in sorted(doc.counts.items()))
            fh.write(f"{doc.doc_id}\t{gold}\t{payload}\n")
        for key, value in corpus.meta.items():
            fh.write(f"#meta {key}={value}\n")


def load_corpus(path: str) -> Corpus:
    """Read a corpus file back; exact inverse of :func:`save_corpus`."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    def fail(lineno: int, msg: str):
        raise LoadError(f"{path}:{lineno}: {msg}")

    if not lines:
        fail(1, "empty file")
    header = lines[0].split()
    if len(header) != 4 or header[0] != "#corpus" or not header[2].startswith("V=") \
            or not header[3].startswith("D="):
        fail(1, f"bad header {lines[0]!r}, expected '#corpus v1 V=<V> D=<D>'")
    if header[1] != "v1":
        fail(1, f"unsupported corpus version {header[1]!r}")
    try:
        nv = int(header[2][2:])
        nd = int(header[3][2:])
    except ValueError:
        fail(1, f"bad V/D in header {lines[0]!r}")
    if len(lines) < 1 + nv + nd:
        fail(len(lines), f"truncated: header promises {nv} vocabulary + {nd} doc lines")

    surfaces = []
    for i in range(nv):
        lineno = 2 + i
        parts = lines[1 + i].split("\t")
        if len(parts) != 2:
            fail(lineno, f"bad vocabulary line {lines[1 + i]!r}")
        if parts[0] != str(i):
            fail(lineno, f"vocabulary ids must be dense and ordered; expected {i}, got {parts[0]!r}")
        surfaces.append(parts[1])
    try:
        vocab = Vocabulary(surfaces)
    except ValueError as exc:
        fail(1 + nv, str(exc))

    docs = []
    for i in range(nd):
        lineno = 2 + nv + i
        line = lines[1 + nv + i]
        parts = line.split("\t")
        if len(parts) != 3:
            fail(lineno, f"expected 3 tab-separated fields, got {len(parts)}")
        doc_id, gold, payload = parts
        gold_label = None if gold == ABSENT_LABEL else gold
        counts = {}
        prev = -1
        for piece in payload.split():
            tok_s, _, cnt_s = piece.partition(":")
            try:
                tok = int(tok_s)
                cnt = int(cnt_s)
            except ValueError:
                fail(lineno, f"doc {doc_id!r}: bad id:count pair {piece!r}")
            if tok >= nv:
                fail(lineno, f"doc {doc_id!r}: token id {tok} out of range for V={nv}")
            if tok <= prev:
                fail(lineno, f"doc {doc_id!r}: token ids must be strictly increasing")
            if cnt < 1:
                fail(lineno, f"doc {doc_id!r}: count {cnt} must be >= 1")
            counts[tok] = cnt
            prev = tok
        docs.append(FeatureDoc(doc_id, gold_label, counts))

    meta = {}
    for j, line in enumerate(lines[1 + nv + nd:]):
        lineno = 2 + nv + nd + j
        if not line.startswith("#meta "):
            fail(lineno, f"unexpected trailing line {line!r}")
        key, sep, value = line[len("#meta "):].partition("=")
        if not sep or not key:
            fail(lineno, f"bad meta line {line!r}")
        meta[key] = value

    try:
        return Corpus(vocab, tuple(docs), meta)
    except ValueError as exc:
        raise LoadError(f"{path}: {exc}") from None
