"""Shared corpus generators for the test suite."""

import numpy as np
import pytest

from acttopics.corpus import Corpus, FeatureDoc, Vocabulary

GOLD_LABELS = ("food", "inside", "menu", "drink", "outside")


def make_corpus(rng, n_docs, vocab_size, min_len=1, max_len=8, max_count=3,
                label_prob=1.0, empty_prob=0.0):
    """Random corpus with the given shape knobs. Deterministic given rng."""
    docs = []
    for i in range(n_docs):
        counts = {}
        if not (empty_prob and rng.random() < empty_prob):
            n_types = int(rng.integers(min_len, max_len + 1))
            tokens = rng.choice(vocab_size, size=min(n_types, vocab_size), replace=False)
            counts = {int(t): int(rng.integers(1, max_count + 1)) for t in tokens}
        gold = None
        if rng.random() < label_prob:
            gold = GOLD_LABELS[int(rng.integers(len(GOLD_LABELS)))]
        docs.append(FeatureDoc(f"doc_{i}", gold, counts))
    vocab = Vocabulary([f"tok_{j}" for j in range(vocab_size)])
    return Corpus(vocab, tuple(docs), {"source": "synthetic"})


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
