"""Synthetic corpora for demos, tests, and desk-scale benchmarks.

``two_cluster_corpus`` draws documents from two disjoint vocabulary
blocks; nearest neighbors on raw TFIDF separate the clusters perfectly,
so it is a smoke test any hashing model should ace.

``topic_corpus`` imitates newsgroup-style data: each topic owns a set of
boosted words on top of a shared Zipfian background, documents are
single-label, and topics overlap enough that retrieval is not trivial.
"""

from __future__ import annotations

import numpy as np

from .corpus import Corpus, Document, Vocabulary, corpus_from_documents
from .errors import ConfigError


def _split_rows(n: int, fractions=(0.6, 0.2, 0.2)) -> dict[str, np.ndarray]:
    n_train = int(round(n * fractions[0]))
    n_val = int(round(n * fractions[1]))
    rows = np.arange(n, dtype=np.int64)
    return {
        "train": rows[:n_train],
        "val": rows[n_train : n_train + n_val],
        "test": rows[n_train + n_val :],
    }


def two_cluster_corpus(
    n_docs: int = 200,
    vocab_size: int = 50,
    doc_length: int = 30,
    seed: int = 0,
    fractions=(0.6, 0.2, 0.2),
) -> Corpus:
    """Two topics over disjoint halves of the vocabulary, labels c0/c1."""
    if vocab_size % 2:
        raise ConfigError("vocab_size must be even")
    rng = np.random.default_rng(seed)
    half = vocab_size // 2
    # Zipf-ish within-block word distribution
    base = 1.0 / np.arange(1, half + 1)
    base /= base.sum()
    docs = []
    for i in range(n_docs):
        cluster = i % 2
        counts = rng.multinomial(doc_length, base)
        offset = cluster * half
        weights = {offset + t: float(c) for t, c in enumerate(counts) if c}
        docs.append(Document(i, weights, frozenset({f"c{cluster}"})))
    return corpus_from_documents(
        Vocabulary.from_size(vocab_size), docs, _split_rows(n_docs, fractions)
    )


def topic_corpus(
    n_docs: int = 2000,
    vocab_size: int = 2000,
    n_topics: int = 20,
    doc_length: int = 80,
    topic_words: int = 60,
    topic_weight: float = 0.65,
    seed: int = 0,
    fractions=(0.6, 0.2, 0.2),
) -> Corpus:
    """Newsgroup-like mixture corpus with one label per document.

    Each document's word distribution mixes a shared Zipfian background
    with a boosted topic-specific block; blocks are disjoint slices of the
    vocabulary but the background keeps documents from different topics
    overlapping.
    """
    if n_topics * topic_words > vocab_size:
        raise ConfigError("vocab too small for the requested topic blocks")
    rng = np.random.default_rng(seed)
    background = 1.0 / np.arange(1, vocab_size + 1)
    background /= background.sum()
    topic_dists = []
    for t in range(n_topics):
        dist = (1.0 - topic_weight) * background.copy()
        block = slice(t * topic_words, (t + 1) * topic_words)
        boost = rng.dirichlet(np.full(topic_words, 0.5))
        dist[block] += topic_weight * boost
        topic_dists.append(dist / dist.sum())
    docs = []
    topics = rng.integers(0, n_topics, size=n_docs)
    for i in range(n_docs):
        counts = rng.multinomial(doc_length, topic_dists[topics[i]])
        weights = {t: float(c) for t, c in enumerate(counts) if c}
        docs.append(Document(i, weights, frozenset({f"topic{topics[i]:02d}"})))
    return corpus_from_documents(
        Vocabulary.from_size(vocab_size), docs, _split_rows(n_docs, fractions)
    )
