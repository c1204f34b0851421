"""Latent Dirichlet Allocation fitted by collapsed Gibbs sampling.

Every token position carries its own topic assignment; a document is a
mixture of topics. Dirichlet priors: alpha (length T) on the per-document
topic proportions, gamma (length V) on each topic's token distribution.
Both priors are integrated out and the sampler works on the assignment
counts alone. Point estimates are posterior means averaged over thinned
post-burn-in states of one chain.

Chains are strictly sequential; run independent chains (distinct seeds) for
parallelism. All randomness flows through one seeded generator, consumed
one variate per token position, so runs are bit-reproducible.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import _gibbs
from .corpus import Corpus, FeatureDoc
from .errors import LoadError
from .catmix import format_floats, parse_floats

logger = logging.getLogger(__name__)

PROB_TOL = 1e-9


@dataclass(frozen=True)
class LdaHyper:
    """Dirichlet concentration vectors: alpha over topics, gamma over tokens."""

    alpha: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=np.float64)
        gamma = np.array(self.gamma, dtype=np.float64)
        for name, vec in (("alpha", alpha), ("gamma", gamma)):
            if vec.ndim != 1 or vec.size == 0:
                raise ValueError(f"{name} must be a non-empty vector")
            if not np.all(np.isfinite(vec)) or np.any(vec <= 0):
                raise ValueError(f"{name} entries must be strictly positive and finite")
        alpha.setflags(write=False)
        gamma.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "gamma", gamma)

    @property
    def n_topics(self) -> int:
        return self.alpha.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def symmetric(cls, n_topics: int, vocab_size: int,
                  alpha: float | None = None, gamma: float = 0.1) -> "LdaHyper":
        """Common defaults: alpha = 50/T, gamma = 0.1, both symmetric."""
        if alpha is None:
            alpha = 50.0 / n_topics
        return cls(np.full(n_topics, alpha), np.full(vocab_size, gamma))


class LdaState:
    """Mutable sampler state: per-position topic assignments plus the count
    matrices derived from them.

    Counts are redundant with ``z`` by construction; ``validate_counts``
    recomputes them from scratch and checks exact agreement. Token counts are
    expanded to positions (a count of 3 is 3 consecutive positions), documents
    in corpus order, positions within a document in ascending token-id order.
    """

    def __init__(self, pos_doc, pos_word, doc_offsets, doc_ids, z,
                 n_dt, n_tw, n_t, hyper: LdaHyper, rng):
        self.pos_doc = pos_doc
        self.pos_word = pos_word
        self.doc_offsets = doc_offsets
        self.doc_ids = doc_ids
        self.z = z
        self.n_dt = n_dt
        self.n_tw = n_tw
        self.n_t = n_t
        self.hyper = hyper
        self.rng = rng

    @property
    def n_docs(self) -> int:
        return len(self.doc_offsets) - 1

    @property
    def n_topics(self) -> int:
        return self.n_t.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.n_tw.shape[1]

    @property
    def doc_lengths(self):
        return np.diff(self.doc_offsets)

    def doc_assignments(self, d: int):
        return self.z[self.doc_offsets[d]:self.doc_offsets[d + 1]]

    def recompute_counts(self) -> tuple:
        """Rebuild (n_dt, n_tw, n_t) from z alone."""
        n_dt = np.zeros_like(self.n_dt)
        n_tw = np.zeros_like(self.n_tw)
        np.add.at(n_dt, (self.pos_doc, self.z), 1)
        np.add.at(n_tw, (self.z, self.pos_word), 1)
        return n_dt, n_tw, n_tw.sum(axis=1)

    def validate_counts(self) -> None:
        n_dt, n_tw, n_t = self.recompute_counts()
        if not (np.array_equal(n_dt, self.n_dt) and np.array_equal(n_tw, self.n_tw)
                and np.array_equal(n_t, self.n_t)):
            raise AssertionError("LDA count matrices inconsistent with assignments")
        if not np.array_equal(self.n_dt.sum(axis=1), self.doc_lengths):
            raise AssertionError("n_dt row sums disagree with document lengths")


@dataclass(frozen=True)
class LdaModel:
    """Posterior-mean estimates from one chain plus the settings that made them."""

    phi: np.ndarray        # (T, V) topic-token distributions
    doc_theta: np.ndarray  # (D, T) doc-topic distributions
    hyper: LdaHyper
    doc_ids: tuple
    burn_in: int
    samples: int
    thin: int
    seed: int

    def __post_init__(self):
        for name in ("phi", "doc_theta"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.size and np.any(np.abs(arr.sum(axis=1) - 1.0) > PROB_TOL):
                raise ValueError(f"{name} rows must sum to 1 within {PROB_TOL}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_topics(self) -> int:
        return self.phi.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.phi.shape[1]


def _expand_positions(docs) -> tuple:
    pos_doc = []
    pos_word = []
    offsets = [0]
    for d, doc in enumerate(docs):
        for tok, cnt in sorted(doc.counts.items()):
            pos_doc.extend([d] * cnt)
            pos_word.extend([tok] * cnt)
        offsets.append(len(pos_doc))
    return (np.asarray(pos_doc, dtype=np.int32),
            np.asarray(pos_word, dtype=np.int32),
            np.asarray(offsets, dtype=np.int64))


def gibbs_init(corpus: Corpus, n_topics: int, hyper: LdaHyper | None = None,
               seed: int = 0) -> LdaState:
    """Assign every token position a uniformly random topic from the seeded
    stream and build the count matrices."""
    if n_topics < 1:
        raise ValueError(f"n_topics must be >= 1, got {n_topics}")
    nv = len(corpus.vocabulary)
    if hyper is None:
        hyper = LdaHyper.symmetric(n_topics, nv)
    if hyper.n_topics != n_topics or hyper.vocab_size != nv:
        raise ValueError(
            f"hyper dims (T={hyper.n_topics}, V={hyper.vocab_size}) do not match "
            f"T={n_topics}, V={nv}"
        )
    pos_doc, pos_word, offsets = _expand_positions(corpus.docs)
    rng = np.random.default_rng(seed)
    z = rng.integers(0, n_topics, size=pos_doc.shape[0]).astype(np.int32)
    n_dt = np.zeros((len(corpus.docs), n_topics), dtype=np.int64)
    n_tw = np.zeros((n_topics, nv), dtype=np.int64)
    np.add.at(n_dt, (pos_doc, z), 1)
    np.add.at(n_tw, (z, pos_word), 1)
    doc_ids = tuple(d.doc_id for d in corpus.docs)
    return LdaState(pos_doc, pos_word, offsets, doc_ids, z,
                    n_dt, n_tw, n_tw.sum(axis=1), hyper, rng)


def collapsed_conditional(state: LdaState, d: int, w: int):
    """Resampling distribution over topics for a position with token w in
    document d, given counts that already exclude that position."""
    weights = (state.n_dt[d] + state.hyper.alpha) \
        * (state.n_tw[:, w] + state.hyper.gamma[w]) / (state.n_t + state.hyper.gamma.sum())
    return weights / weights.sum()


def gibbs_sweep(state: LdaState) -> LdaState:
    """Resample every token position once, in document order then position
    order, mutating the state in place. One RNG variate per position."""
    uniforms = state.rng.random(state.z.shape[0])
    _gibbs.sweep(state.z, state.pos_doc, state.pos_word,
                 state.n_dt, state.n_tw, state.n_t,
                 state.hyper.alpha, state.hyper.gamma,
                 state.hyper.gamma.sum(), uniforms)
    return state


def _phi_estimate(state: LdaState):
    gamma = state.hyper.gamma
    return (state.n_tw + gamma[None, :]) / (state.n_t + gamma.sum())[:, None]


def _doc_theta_estimate(state: LdaState):
    alpha = state.hyper.alpha
    return (state.n_dt + alpha[None, :]) / (state.doc_lengths + alpha.sum())[:, None]


def fit_lda(corpus: Corpus, n_topics: int, hyper: LdaHyper | None = None,
            burn_in: int = 200, samples: int = 10, thin: int = 10,
            seed: int = 0) -> LdaModel:
    """Fit by collapsed Gibbs sampling.

    Runs ``burn_in`` sweeps, then ``samples`` times runs ``thin`` sweeps and
    collects the posterior-mean estimates; the model averages the collected
    estimates. Deterministic given the seed. Documents with no tokens take no
    part in sampling; their doc_theta is the prior mean.
    """
    if burn_in < 0 or samples < 1 or thin < 1:
        raise ValueError("need burn_in >= 0, samples >= 1, thin >= 1")
    if corpus.num_tokens == 0:
        raise ValueError("corpus has no tokens to sample")
    n_empty = sum(1 for d in corpus.docs if d.empty)
    if n_empty:
        logger.info("%d empty document(s) excluded from sampling", n_empty)
    state = gibbs_init(corpus, n_topics, hyper, seed)
    for _ in range(burn_in):
        gibbs_sweep(state)
    phi_acc = np.zeros((n_topics, state.vocab_size))
    theta_acc = np.zeros((state.n_docs, n_topics))
    for _ in range(samples):
        for _ in range(thin):
            gibbs_sweep(state)
        phi_acc += _phi_estimate(state)
        theta_acc += _doc_theta_estimate(state)
    return LdaModel(phi_acc / samples, theta_acc / samples, state.hyper,
                    state.doc_ids, burn_in, samples, thin, seed)


def infer_doc_theta(model: LdaModel, doc: FeatureDoc, sweeps: int = 100,
                    seed: int = 0):
    """Fold in one unseen document: Gibbs over its positions with phi held
    fixed, averaging the doc-topic posterior over the second half of the
    sweeps. Out-of-vocabulary tokens are dropped (logged); a document empty
    after dropping gets the uniform vector."""
    n_topics = model.n_topics
    alpha = model.hyper.alpha
    words = []
    n_oov = 0
    for tok, cnt in sorted(doc.counts.items()):
        if tok >= model.vocab_size:
            n_oov += cnt
            continue
        words.extend([tok] * cnt)
    if n_oov:
        logger.warning("doc %r: dropped %d out-of-vocabulary token(s)", doc.doc_id, n_oov)
    if not words:
        return np.full(n_topics, 1.0 / n_topics)
    words = np.asarray(words, dtype=np.int64)
    n = words.shape[0]
    rng = np.random.default_rng(seed)
    z = rng.integers(0, n_topics, size=n)
    n_dt = np.bincount(z, minlength=n_topics).astype(np.float64)
    alpha_sum = alpha.sum()
    burn = sweeps // 2
    acc = np.zeros(n_topics)
    collected = 0
    for sweep_idx in range(sweeps):
        for i in range(n):
            n_dt[z[i]] -= 1
            weights = (n_dt + alpha) * model.phi[:, words[i]]
            total = weights.sum()
            if total <= 0.0:
                new = int(rng.integers(0, n_topics))
            else:
                target = rng.random() * total
                new = int(np.searchsorted(np.cumsum(weights), target, side="right"))
                new = min(new, n_topics - 1)
            z[i] = new
            n_dt[new] += 1
        if sweep_idx >= burn:
            acc += (n_dt + alpha) / (n + alpha_sum)
            collected += 1
    if collected == 0:
        return (n_dt + alpha) / (n + alpha_sum)
    return acc / collected


def held_out_log_likelihood(model: LdaModel, corpus: Corpus, sweeps: int = 100,
                            seed: int = 0) -> float:
    """Token-weighted mean of log p(token | doc) under fold-in doc-topic
    posteriors. Out-of-vocabulary tokens are excluded from both numerator and
    denominator; an all-OOV corpus is an error."""
    total = 0.0
    n_tokens = 0
    for doc in corpus.docs:
        in_vocab = {t: c for t, c in doc.counts.items() if t < model.vocab_size}
        if not in_vocab:
            continue
        theta = infer_doc_theta(model, doc, sweeps=sweeps, seed=seed)
        token_prob = theta @ model.phi  # (V,)
        for tok, cnt in sorted(in_vocab.items()):
            with np.errstate(divide="ignore"):
                lp = math.log(token_prob[tok]) if token_prob[tok] > 0 else -math.inf
            total += cnt * min(lp, 0.0)
            n_tokens += cnt
    if n_tokens == 0:
        raise ValueError("no in-vocabulary tokens in corpus")
    return total / n_tokens


def training_log_likelihood(model: LdaModel, corpus: Corpus) -> float:
    """Total log p(token | doc) over the training corpus using the stored
    doc_theta rows (corpus must match the fitting corpus doc-for-doc).
    Used to pick the best of several chains."""
    if tuple(d.doc_id for d in corpus.docs) != model.doc_ids:
        raise ValueError("corpus documents do not match the model's training documents")
    total = 0.0
    for i, doc in enumerate(corpus.docs):
        token_prob = model.doc_theta[i] @ model.phi
        for tok, cnt in sorted(doc.counts.items()):
            lp = math.log(token_prob[tok]) if token_prob[tok] > 0 else -math.inf
            total += cnt * min(lp, 0.0)
    return total


# ---------------------------------------------------------------------------
# serialization


def save_lda(model: LdaModel, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#lda v1 T={model.n_topics} V={model.vocab_size}\n")
        fh.write("alpha\t" + format_floats(model.hyper.alpha) + "\n")
        fh.write("gamma\t" + format_floats(model.hyper.gamma) + "\n")
        fh.write(
            f"sweeps\tburn_in={model.burn_in} samples={model.samples} "
            f"thin={model.thin} seed={model.seed} D={len(model.doc_ids)}\n"
        )
        for t in range(model.n_topics):
            fh.write(f"phi\t{t}\t" + format_floats(model.phi[t]) + "\n")
        for i, doc_id in enumerate(model.doc_ids):
            fh.write(f"doc_theta\t{doc_id}\t" + format_floats(model.doc_theta[i]) + "\n")


def load_lda(path: str) -> LdaModel:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise LoadError(f"{path}:1: empty file")
    header = lines[0].split()
    if len(header) != 4 or header[0] != "#lda" or not header[2].startswith("T=") \
            or not header[3].startswith("V="):
        raise LoadError(f"{path}:1: bad header {lines[0]!r}")
    if header[1] != "v1":
        raise LoadError(f"{path}:1: unsupported lda version {header[1]!r}")
    try:
        n_topics = int(header[2][2:])
        nv = int(header[3][2:])
    except ValueError:
        raise LoadError(f"{path}:1: bad T/V in header") from None

    def tagged(lineno: int, tag: str) -> str:
        if lineno - 1 >= len(lines):
            raise LoadError(f"{path}:{lineno}: truncated, expected {tag} line")
        name, _, payload = lines[lineno - 1].partition("\t")
        if name != tag:
            raise LoadError(f"{path}:{lineno}: expected {tag} line, got {lines[lineno - 1]!r}")
        return payload

    alpha = parse_floats(tagged(2, "alpha"), n_topics, f"{path}:2")
    gamma = parse_floats(tagged(3, "gamma"), nv, f"{path}:3")
    meta = {}
    for piece in tagged(4, "sweeps").split():
        key, _, value = piece.partition("=")
        try:
            meta[key] = int(value)
        except ValueError:
            raise LoadError(f"{path}:4: bad sweeps field {piece!r}") from None
    for key in ("burn_in", "samples", "thin", "seed", "D"):
        if key not in meta:
            raise LoadError(f"{path}:4: sweeps line missing {key}=")
    n_docs = meta["D"]
    if len(lines) != 4 + n_topics + n_docs:
        raise LoadError(
            f"{path}: expected {4 + n_topics + n_docs} lines for T={n_topics}, D={n_docs}, "
            f"found {len(lines)}"
        )
    phi = np.empty((n_topics, nv))
    for t in range(n_topics):
        lineno = 5 + t
        parts = lines[lineno - 1].split("\t")
        if len(parts) != 3 or parts[0] != "phi" or parts[1] != str(t):
            raise LoadError(f"{path}:{lineno}: expected 'phi\\t{t}\\t...' line")
        phi[t] = parse_floats(parts[2], nv, f"{path}:{lineno}")
    doc_theta = np.empty((n_docs, n_topics))
    doc_ids = []
    for i in range(n_docs):
        lineno = 5 + n_topics + i
        parts = lines[lineno - 1].split("\t")
        if len(parts) != 3 or parts[0] != "doc_theta":
            raise LoadError(f"{path}:{lineno}: expected doc_theta line")
        doc_ids.append(parts[1])
        doc_theta[i] = parse_floats(parts[2], n_topics, f"{path}:{lineno}")
    try:
        return LdaModel(phi, doc_theta, LdaHyper(alpha, gamma), tuple(doc_ids),
                        meta["burn_in"], meta["samples"], meta["thin"], meta["seed"])
    except ValueError as exc:
        raise LoadError(f"{path}: {exc}") from None
