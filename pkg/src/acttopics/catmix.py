"""Categorical mixture model over count documents, fitted by EM.

Each document is assumed drawn wholly from one of T topics; topic t is a
categorical distribution beta_t over the vocabulary and is chosen with
probability theta_t. The data log-likelihood is

    sum_i log sum_t theta_t * prod_j beta_tj ** count_ij

evaluated in log-space throughout.
"""

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.special import logsumexp

from .corpus import Corpus
from .errors import DegenerateTopicError, LoadError

logger = logging.getLogger(__name__)

PROB_TOL = 1e-9  # allowed deviation of a probability row sum from 1


def _frozen_probability_matrix(arr, name: str, tol: float = PROB_TOL):
    out = np.array(arr, dtype=np.float64)
    if out.ndim == 1:
        out = out[None, :]
        squeeze = True
    else:
        squeeze = False
    if np.any(out < 0) or not np.all(np.isfinite(out)):
        raise ValueError(f"{name} has negative or non-finite entries")
    sums = out.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > tol):
        raise ValueError(f"{name} rows must sum to 1 within {tol}")
    if squeeze:
        out = out[0]
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CatMixParams:
    """Mixture weights theta (T,) and per-topic token distributions beta (T, V)."""

    theta: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", _frozen_probability_matrix(self.theta, "theta"))
        object.__setattr__(self, "beta", _frozen_probability_matrix(self.beta, "beta"))
        if self.theta.ndim != 1 or self.beta.ndim != 2:
            raise ValueError("theta must be a vector and beta a matrix")
        if self.beta.shape[0] != self.theta.shape[0]:
            raise ValueError(
                f"beta has {self.beta.shape[0]} rows but theta has {self.theta.shape[0]} entries"
            )

    @property
    def n_topics(self) -> int:
        return self.theta.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.beta.shape[1]


@dataclass(frozen=True)
class FitTrace:
    """Per-iteration log-likelihoods and why the loop stopped."""

    log_likelihood: tuple
    n_iter: int
    reason: str  # "tol" or "max_iter"


def count_matrix(corpus: Corpus) -> tuple:
    """Sparse (D, V) count matrix and (D,) total-count vector for a corpus."""
    nv = len(corpus.vocabulary)
    indptr = [0]
    indices = []
    data = []
    for doc in corpus.docs:
        for tok, cnt in sorted(doc.counts.items()):
            indices.append(tok)
            data.append(cnt)
        indptr.append(len(indices))
    counts = sparse.csr_matrix(
        (np.asarray(data, dtype=np.float64), np.asarray(indices, dtype=np.int64),
         np.asarray(indptr, dtype=np.int64)),
        shape=(len(corpus.docs), nv),
    )
    lengths = np.asarray(counts.sum(axis=1)).ravel()
    return counts, lengths


def _check_dims(corpus: Corpus, params: CatMixParams) -> None:
    if params.vocab_size != len(corpus.vocabulary):
        raise ValueError(
            f"params cover V={params.vocab_size} tokens but corpus has V={len(corpus.vocabulary)}"
        )


def _log_scores(counts, params: CatMixParams):
    """(D, T) matrix of log theta_t + sum_j count_ij * log beta_tj."""
    with np.errstate(divide="ignore"):
        log_beta = np.log(params.beta)  # -inf where beta == 0
        log_theta = np.log(params.theta)
    return counts @ log_beta.T + log_theta[None, :]


def _loglik_from_scores(scores) -> float:
    # per-document log-sum-exp via fsum: the result is exactly invariant
    # under any permutation of the topic axis
    total = 0.0
    for row in scores:
        m = row.max()
        if m == -np.inf:
            return -math.inf
        total += m + math.log(math.fsum(math.exp(v - m) for v in row))
    return total


def log_likelihood(corpus: Corpus, params: CatMixParams) -> float:
    """Log-likelihood of the corpus under the mixture.

    Empty documents are not admitted (exclude them first). A document whose
    tokens have zero probability under every topic makes the result -inf;
    that is a value, not an error.
    """
    _check_dims(corpus, params)
    for doc in corpus.docs:
        if doc.empty:
            raise ValueError(f"corpus contains empty document {doc.doc_id!r}; exclude empty docs")
    counts, _ = count_matrix(corpus)
    return _loglik_from_scores(_log_scores(counts, params))


def _responsibilities_from_scores(scores):
    n_topics = scores.shape[1]
    with np.errstate(invalid="ignore"):
        norm = logsumexp(scores, axis=1)
        resp = np.exp(scores - norm[:, None])
    dead = ~np.isfinite(norm)
    if np.any(dead):
        resp[dead] = 1.0 / n_topics
        logger.warning(
            "%d document(s) have zero probability under every topic; assigned uniform responsibilities",
            int(dead.sum()),
        )
    return resp


def e_step(corpus: Corpus, params: CatMixParams):
    """Posterior topic responsibilities, one row per document, rows sum to 1.

    Documents with -inf score under every topic get a uniform row (logged).
    """
    _check_dims(corpus, params)
    counts, _ = count_matrix(corpus)
    return _responsibilities_from_scores(_log_scores(counts, params))


def _m_step_arrays(counts, lengths, resp, smoothing: float) -> CatMixParams:
    n_docs, n_topics = resp.shape
    nv = counts.shape[1]
    weighted_counts = (counts.T @ resp).T  # (T, V)
    eff_len = resp.T @ lengths  # (T,)
    if smoothing == 0.0:
        dead = np.flatnonzero(eff_len == 0.0)
        if dead.size:
            raise DegenerateTopicError(
                f"topic {int(dead[0])} has zero total responsibility and smoothing is 0"
            )
    theta = resp.sum(axis=0) / n_docs
    beta = (smoothing + weighted_counts) / (nv * smoothing + eff_len)[:, None]
    return CatMixParams(theta, beta)


def m_step(corpus: Corpus, resp, smoothing: float = 0.0) -> CatMixParams:
    """Closed-form parameter update from responsibilities.

    theta_t is the mean responsibility; beta_tj is the responsibility-weighted
    token frequency with ``smoothing`` added to every cell.
    """
    resp = np.asarray(resp, dtype=np.float64)
    if resp.shape[0] != len(corpus.docs):
        raise ValueError(f"responsibilities have {resp.shape[0]} rows for {len(corpus.docs)} docs")
    if smoothing < 0:
        raise ValueError(f"smoothing must be >= 0, got {smoothing}")
    counts, lengths = count_matrix(corpus)
    return _m_step_arrays(counts, lengths, resp, smoothing)


def fit_em(corpus: Corpus, n_topics: int, init=0, tol: float = 1e-6,
           max_iter: int = 500, smoothing: float = 1e-6):
    """Fit the mixture by EM.

    Parameters
    ----------
    corpus : Corpus
        Input documents. Empty documents are skipped during fitting and get
        uniform rows in the returned responsibilities.
    n_topics : int
        Number of mixture components T.
    init : int or CatMixParams
        Seed for random initialization (responsibilities drawn from a
        symmetric Dirichlet(1) per document, then one M-step), or explicit
        starting parameters.
    tol : float
        Stop when the absolute log-likelihood change falls below this.
    max_iter : int
        Iteration cap.
    smoothing : float
        Additive smoothing for the M-step; keeps beta strictly positive.

    Returns
    -------
    (CatMixParams, ndarray, FitTrace)
        Fitted parameters, (D, T) responsibilities for all documents
        (uniform rows for empty docs), and the iteration trace.
    """
    if n_topics < 1:
        raise ValueError(f"n_topics must be >= 1, got {n_topics}")
    if max_iter < 1:
        raise ValueError(f"max_iter must be >= 1, got {max_iter}")
    non_empty = [i for i, d in enumerate(corpus.docs) if not d.empty]
    n_skipped = len(corpus.docs) - len(non_empty)
    if not non_empty:
        raise ValueError("corpus has no non-empty documents")
    if n_skipped:
        logger.info("skipping %d empty document(s) during fitting", n_skipped)
    if n_topics > len(non_empty):
        warnings.warn(
            f"fitting {n_topics} topics to only {len(non_empty)} non-empty documents",
            stacklevel=2,
        )

    sub = Corpus(corpus.vocabulary, tuple(corpus.docs[i] for i in non_empty), corpus.meta)
    counts, lengths = count_matrix(sub)

    if isinstance(init, CatMixParams):
        _check_dims(sub, init)
        if init.n_topics != n_topics:
            raise ValueError(f"init params have T={init.n_topics}, requested T={n_topics}")
        params = init
    else:
        rng = np.random.default_rng(init)
        resp0 = rng.dirichlet(np.ones(n_topics), size=len(non_empty))
        params = _m_step_arrays(counts, lengths, resp0, smoothing)

    trace = []
    resp = None
    reason = "max_iter"
    for _ in range(max_iter):
        scores = _log_scores(counts, params)
        trace.append(_loglik_from_scores(scores))
        resp = _responsibilities_from_scores(scores)
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) < tol:
            reason = "tol"
            break
        params = _m_step_arrays(counts, lengths, resp, smoothing)

    full_resp = np.full((len(corpus.docs), n_topics), 1.0 / n_topics)
    full_resp[non_empty] = resp
    return params, full_resp, FitTrace(tuple(trace), len(trace), reason)


# ---------------------------------------------------------------------------
# serialization


def save_catmix(params: CatMixParams, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"#catmix v1 T={params.n_topics} V={params.vocab_size}\n")
        fh.write("theta\t" + format_floats(params.theta) + "\n")
        for t in range(params.n_topics):
            fh.write(f"beta\t{t}\t" + format_floats(params.beta[t]) + "\n")


def format_floats(values) -> str:
    """17-significant-digit decimal rendering; round-trips float64 exactly."""
    return " ".join(f"{v:.17g}" for v in values)


def parse_floats(text: str, expected: int, context: str):
    parts = text.split()
    if len(parts) != expected:
        raise LoadError(f"{context}: expected {expected} floats, got {len(parts)}")
    try:
        return np.array([float(p) for p in parts], dtype=np.float64)
    except ValueError:
        raise LoadError(f"{context}: unparseable float") from None


def load_catmix(path: str) -> CatMixParams:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise LoadError(f"{path}:1: empty file")
    header = lines[0].split()
    if len(header) != 4 or header[0] != "#catmix" or not header[2].startswith("T=") \
            or not header[3].startswith("V="):
        raise LoadError(f"{path}:1: bad header {lines[0]!r}")
    if header[1] != "v1":
        raise LoadError(f"{path}:1: unsupported catmix version {header[1]!r}")
    try:
        n_topics = int(header[2][2:])
        nv = int(header[3][2:])
    except ValueError:
        raise LoadError(f"{path}:1: bad T/V in header") from None
    if len(lines) != 2 + n_topics:
        raise LoadError(f"{path}: expected {2 + n_topics} lines for T={n_topics}, found {len(lines)}")
    tag, _, payload = lines[1].partition("\t")
    if tag != "theta":
        raise LoadError(f"{path}:2: expected theta line, got {lines[1]!r}")
    theta = parse_floats(payload, n_topics, f"{path}:2")
    beta = np.empty((n_topics, nv))
    for t in range(n_topics):
        lineno = 3 + t
        parts = lines[2 + t].split("\t")
        if len(parts) != 3 or parts[0] != "beta" or parts[1] != str(t):
            raise LoadError(f"{path}:{lineno}: expected 'beta\\t{t}\\t...' line")
        beta[t] = parse_floats(parts[2], nv, f"{path}:{lineno}")
    try:
        return CatMixParams(theta, beta)
    except ValueError as exc:
        raise LoadError(f"{path}: {exc}") from None
