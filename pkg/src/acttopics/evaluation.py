"""Compare unsupervised topics against gold labels.

Produces the topic-by-label count ("density") tables, purity, normalized
mutual information, and per-topic top-feature reports, with plain-text, CSV
and LaTeX renderings.

NMI uses natural logs and is computed from integer marginals with exact
(fsum) summation, so it is exactly invariant under transposition and under
permutations of topics or labels.
"""

import csv
import io
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .corpus import Vocabulary


@dataclass(frozen=True)
class ContingencyTable:
    """Topic-by-gold-label count matrix. ``skipped`` counts docs that had no
    gold label and took no part in the table."""

    labels: tuple
    counts: np.ndarray  # (T, L) int64
    skipped: int = 0
    nicknames: Mapping[int, str] | None = None  # optional human topic names

    def __post_init__(self):
        arr = np.array(self.counts, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[1] != len(self.labels):
            raise ValueError(
                f"counts shape {arr.shape} does not match {len(self.labels)} labels"
            )
        if np.any(arr < 0):
            raise ValueError("counts must be non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "counts", arr)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def n_topics(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def transposed(self) -> "ContingencyTable":
        """Labels become rows; used for symmetry checks."""
        return ContingencyTable(tuple(str(t) for t in range(self.n_topics)),
                                self.counts.T.copy(), self.skipped)

    def row_label(self, t: int) -> str:
        if self.nicknames and t in self.nicknames:
            return f"{t} ({self.nicknames[t]})"
        return str(t)


def hard_assign(doc_topic) -> np.ndarray:
    """Argmax topic per row; ties go to the lowest topic index."""
    doc_topic = np.asarray(doc_topic, dtype=np.float64)
    if doc_topic.ndim != 2:
        raise ValueError("expected a (D, T) matrix")
    return np.argmax(doc_topic, axis=1)


def contingency(assignments: Sequence[int], labels: Sequence[str | None],
                label_order: Sequence[str] | None = None,
                n_topics: int | None = None) -> ContingencyTable:
    """Count docs per (assigned topic, gold label). Docs without a gold label
    are skipped and counted in ``skipped``. Label columns follow
    ``label_order`` when given (unknown labels are an error), else
    first-occurrence order."""
    if len(assignments) != len(labels):
        raise ValueError(
            f"{len(assignments)} assignments vs {len(labels)} labels"
        )
    if label_order is not None:
        order = list(label_order)
        index = {lab: j for j, lab in enumerate(order)}
        if len(index) != len(order):
            raise ValueError("label_order contains duplicates")
        for lab in labels:
            if lab is not None and lab not in index:
                raise ValueError(f"label {lab!r} not in label_order")
    else:
        order = []
        index = {}
        for lab in labels:
            if lab is not None and lab not in index:
                index[lab] = len(order)
                order.append(lab)
    if n_topics is None:
        n_topics = int(max(assignments)) + 1 if len(assignments) else 0
    counts = np.zeros((n_topics, len(order)), dtype=np.int64)
    skipped = 0
    for t, lab in zip(assignments, labels):
        if lab is None:
            skipped += 1
            continue
        if t < 0 or t >= n_topics:
            raise ValueError(f"assignment {t} outside 0..{n_topics - 1}")
        counts[t, index[lab]] += 1
    return ContingencyTable(tuple(order), counts, skipped)


def purity(table: ContingencyTable) -> float:
    """Fraction of docs whose topic's majority label matches their own."""
    total = table.total
    if total == 0:
        raise ValueError("empty contingency table")
    if table.counts.shape[1] == 0:
        raise ValueError("contingency table has no label columns")
    return int(table.counts.max(axis=1).sum()) / total


def _marginal_entropy(marginals, total: int) -> float:
    log_total = math.log(total)
    return math.fsum((int(m) / total) * (log_total - math.log(int(m)))
                     for m in marginals if m > 0)


def nmi(table: ContingencyTable) -> float:
    """Mutual information between topic and label, normalized by the
    arithmetic mean of the marginal entropies (natural log, so the base
    cancels). Zero when either marginal entropy is zero, except a 1x1 table,
    which is perfectly matched by convention and scores 1."""
    counts = table.counts
    total = table.total
    if total == 0:
        raise ValueError("empty contingency table")
    rows = counts.sum(axis=1)
    cols = counts.sum(axis=0)
    h_rows = _marginal_entropy(rows, total)
    h_cols = _marginal_entropy(cols, total)
    if h_rows == 0.0 and h_cols == 0.0:
        return 1.0 if counts.shape == (1, 1) else 0.0
    if h_rows == 0.0 or h_cols == 0.0:
        return 0.0
    log_total = math.log(total)
    terms = []
    for i, j in zip(*np.nonzero(counts)):
        n = int(counts[i, j])
        log_n = math.log(n)
        log_r = math.log(int(rows[i]))
        log_c = math.log(int(cols[j]))
        # symmetric 4-term split keeps the value exactly invariant under
        # transposition and makes diagonal tables hit NMI == 1.0 exactly
        inner = math.fsum((log_n - log_r, log_total - log_c,
                           log_n - log_c, log_total - log_r)) / 2.0
        terms.append((n / total) * inner)
    mi = math.fsum(terms)
    return min(1.0, max(0.0, mi / ((h_rows + h_cols) / 2.0)))


def top_features(weights, vocabulary: Vocabulary, k: int) -> list:
    """Top-k (surface, weight) pairs by descending weight, ties to the lower
    token id, k clamped to the vocabulary size."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (len(vocabulary),):
        raise ValueError(
            f"weights shape {weights.shape} does not match V={len(vocabulary)}"
        )
    order = np.argsort(-weights, kind="stable")[: min(k, len(vocabulary))]
    return [(vocabulary.surface_of(int(i)), float(weights[i])) for i in order]


def topic_report(phi, vocabulary: Vocabulary, k: int) -> list:
    """One top-features row per topic."""
    phi = np.asarray(phi, dtype=np.float64)
    return [top_features(phi[t], vocabulary, k) for t in range(phi.shape[0])]


# ---------------------------------------------------------------------------
# rendering

FORMATS = ("text", "csv", "latex")


def _check_format(fmt: str) -> None:
    if fmt not in FORMATS:
        raise ValueError(f"unknown format {fmt!r}, expected one of {FORMATS}")


def _table_cells(table: ContingencyTable, normalize: bool) -> list:
    rows = []
    for t in range(table.n_topics):
        row = table.counts[t]
        if normalize:
            total = row.sum()
            cells = ["0.0" if total == 0 else f"{100.0 * c / total:.1f}" for c in row]
        else:
            cells = [str(int(c)) for c in row]
        rows.append([table.row_label(t)] + cells)
    return rows


def render_contingency(table: ContingencyTable, fmt: str = "text",
                       normalize: bool = False) -> str:
    """Render the density table. ``normalize`` switches the raw counts to
    row percentages."""
    _check_format(fmt)
    header = ["topics"] + list(table.labels)
    rows = _table_cells(table, normalize)
    if fmt == "csv":
        return _csv_lines([header] + rows)
    if fmt == "latex":
        colspec = "|" + "c|" * len(header)
        lines = [f"\\begin{{tabular}}{{{colspec}}}", "\\hline",
                 " & ".join(header) + " \\\\", "\\hline"]
        for row in rows:
            lines.append(" & ".join(row) + " \\\\")
            lines.append("\\hline")
        lines.append("\\end{tabular}")
        return "\n".join(lines) + "\n"
    widths = [max(len(str(cell)) for cell in col) for col in zip(*([header] + rows))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(header, widths)).rstrip()]
    for row in rows:
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip())
    if table.skipped:
        lines.append(f"({table.skipped} doc(s) without gold label skipped)")
    return "\n".join(lines) + "\n"


def render_top_features(report: Sequence, fmt: str = "text",
                        nicknames: Mapping[int, str] | None = None) -> str:
    """Render per-topic top components. LaTeX mirrors the density table's
    row shape: one row per topic, one column per component."""
    _check_format(fmt)
    if fmt == "csv":
        rows = [["topic", "rank", "surface", "weight"]]
        for t, row in enumerate(report):
            for rank, (surface, weight) in enumerate(row):
                rows.append([str(t), str(rank), surface, f"{weight:.6g}"])
        return _csv_lines(rows)
    if fmt == "latex":
        width = max((len(row) for row in report), default=0)
        colspec = "|" + "c|" * (width + 1)
        lines = [f"\\begin{{tabular}}{{{colspec}}}", "\\hline"]
        for t, row in enumerate(report):
            name = f"{t} ({nicknames[t]})" if nicknames and t in nicknames else str(t)
            cells = [surface for surface, _ in row] + [""] * (width - len(row))
            lines.append(" & ".join([name] + cells) + " \\\\")
            lines.append("\\hline")
        lines.append("\\end{tabular}")
        return "\n".join(lines) + "\n"
    lines = []
    for t, row in enumerate(report):
        name = f"{t} ({nicknames[t]})" if nicknames and t in nicknames else str(t)
        parts = ", ".join(f"{surface} ({weight:.4f})" for surface, weight in row)
        lines.append(f"topic {name}: {parts}")
    return "\n".join(lines) + "\n"


def _csv_lines(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()
