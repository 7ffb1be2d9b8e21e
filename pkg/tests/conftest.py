import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from graphhash import corpus as corpus_mod
from graphhash.corpus import Document, Vocabulary, corpus_from_documents


@pytest.fixture
def tiny_corpus():
    """5 docs over 6 terms, raw counts, fully in the train split."""
    docs = [
        Document(0, {0: 3.0, 1: 1.0}, frozenset({"a"})),
        Document(1, {0: 1.0, 2: 2.0}, frozenset({"a"})),
        Document(2, {2: 1.0, 3: 4.0}, frozenset({"b"})),
        Document(3, {3: 2.0, 4: 1.0}, frozenset({"b"})),
        Document(4, {4: 2.0, 5: 5.0}, frozenset({"b"})),
    ]
    split = {
        "train": np.arange(5, dtype=np.int64),
        "val": np.empty(0, dtype=np.int64),
        "test": np.empty(0, dtype=np.int64),
    }
    return corpus_from_documents(Vocabulary.from_size(6), docs, split)


def write_bow_corpus(tmp_path, docs, vocab_size, split_assign, name="corpus.bow"):
    """Write the three corpus files and return the corpus path."""
    path = tmp_path / name
    lines = []
    for doc_id, weights, labels in docs:
        entries = " ".join(f"{i}:{w}" for i, w in weights.items())
        lines.append(f"{doc_id} | {entries} | {','.join(sorted(labels))}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    (tmp_path / (name + ".meta")).write_text(
        f"vocab_size {vocab_size}\nn_docs {len(docs)}\n", encoding="utf-8"
    )
    (tmp_path / (name + ".split")).write_text(
        "\n".join(f"{doc_id} {split_assign[doc_id]}" for doc_id, _, _ in docs) + "\n",
        encoding="utf-8",
    )
    return str(path)
