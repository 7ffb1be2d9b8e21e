import math

import numpy as np
import pytest

from conftest import write_bow_corpus
from graphhash import DataError, ParseError
from graphhash.corpus import (
    Document,
    Vocabulary,
    corpus_from_documents,
    load_corpus,
    save_corpus,
    tfidf_transform,
)


def test_load_minimal_single_doc(tmp_path):
    path = write_bow_corpus(tmp_path, [(0, {3: 1.0}, {"labelA"})], 5, {0: "train"})
    corpus = load_corpus(path)
    assert corpus.n_docs == 1
    assert corpus.vocab_size == 5
    assert corpus.labels[0] == frozenset({"labelA"})
    assert corpus.matrix[0, 3] == 1.0


def test_load_reports_paper_scale_counts(tmp_path):
    # |V|=10000 with the published newsgroup split 11016/3667/3668; the split
    # must cover the corpus, so N is its sum
    n = 11016 + 3667 + 3668
    docs = [(i, {i % 10000: 1.0}, {f"g{i % 20}"}) for i in range(n)]
    assign = {}
    for i in range(n):
        assign[i] = "train" if i < 11016 else ("val" if i < 11016 + 3667 else "test")
    path = write_bow_corpus(tmp_path, docs, 10000, assign)
    corpus = load_corpus(path)
    assert corpus.n_docs == n
    assert corpus.vocab_size == 10000
    assert {k: len(v) for k, v in corpus.split.items()} == {
        "train": 11016,
        "val": 3667,
        "test": 3668,
    }


def test_out_of_bounds_term_index_names_doc(tmp_path):
    path = write_bow_corpus(tmp_path, [(0, {10: 1.0}, {"x"})], 5, {0: "train"})
    with pytest.raises(DataError, match="document 0.*index 10"):
        load_corpus(path)


def test_empty_document_rejected(tmp_path):
    path = write_bow_corpus(
        tmp_path, [(0, {1: 1.0}, {"x"}), (7, {}, {"x"})], 5, {0: "train", 7: "test"}
    )
    with pytest.raises(DataError, match="document 7"):
        load_corpus(path)


def test_malformed_line_reports_line_number(tmp_path):
    path = write_bow_corpus(tmp_path, [(0, {1: 1.0}, {"x"})], 5, {0: "train"})
    with open(path, "a", encoding="utf-8") as fh:
        fh.write("# comment is fine\n")
        fh.write("not a valid line\n")
    with pytest.raises(ParseError, match=":3:"):
        load_corpus(path)


def test_doc_count_must_match_header(tmp_path):
    path = write_bow_corpus(tmp_path, [(0, {1: 1.0}, {"x"})], 5, {0: "train"})
    (tmp_path / "corpus.bow.meta").write_text("vocab_size 5\nn_docs 2\n")
    with pytest.raises(DataError, match="n_docs=2"):
        load_corpus(path)


def test_split_must_cover_all_docs(tmp_path):
    path = write_bow_corpus(
        tmp_path, [(0, {1: 1.0}, {"x"}), (1, {2: 1.0}, {"y"})], 5, {0: "train", 1: "test"}
    )
    (tmp_path / "corpus.bow.split").write_text("0 train\n")
    with pytest.raises(DataError, match="missing from split"):
        load_corpus(path)


def test_unseen_test_label_warns_but_loads(tmp_path):
    path = write_bow_corpus(
        tmp_path,
        [(0, {1: 1.0}, {"seen"}), (1, {2: 1.0}, {"novel"})],
        5,
        {0: "train", 1: "test"},
    )
    with pytest.warns(UserWarning, match="novel"):
        corpus = load_corpus(path)
    assert corpus.n_docs == 2


def test_multi_label_documents(tmp_path):
    path = write_bow_corpus(
        tmp_path, [(0, {1: 2.0}, {"earn", "grain", "wheat"})], 5, {0: "train"}
    )
    corpus = load_corpus(path)
    assert corpus.labels[0] == frozenset({"earn", "grain", "wheat"})


def test_empty_label_field_allowed(tmp_path):
    path = tmp_path / "c.bow"
    path.write_text("0 | 1:1.0 | \n", encoding="utf-8")
    (tmp_path / "c.bow.meta").write_text("vocab_size 3\nn_docs 1\n")
    (tmp_path / "c.bow.split").write_text("0 train\n")
    corpus = load_corpus(str(path))
    assert corpus.labels[0] == frozenset()


def test_round_trip_is_identical(tmp_path, tiny_corpus):
    # awkward weights exercise the round-trip float formatting
    tiny_corpus.matrix.data[0] = 0.1 + 0.2
    tiny_corpus.matrix.data[1] = 1e-17
    out = str(tmp_path / "saved.bow")
    save_corpus(tiny_corpus, out)
    loaded = load_corpus(out)
    assert np.array_equal(loaded.doc_ids, tiny_corpus.doc_ids)
    assert np.array_equal(loaded.matrix.indptr, tiny_corpus.matrix.indptr)
    assert np.array_equal(loaded.matrix.indices, tiny_corpus.matrix.indices)
    assert np.array_equal(loaded.matrix.data, tiny_corpus.matrix.data)  # bit-equal
    assert loaded.labels == tiny_corpus.labels
    for name in ("train", "val", "test"):
        assert np.array_equal(loaded.split[name], tiny_corpus.split[name])


class TestTfidf:
    def test_term_in_every_document_zeroes_out(self):
        docs = [Document(i, {0: 2.0, i + 1: 1.0}) for i in range(3)]
        split = {
            "train": np.arange(3, dtype=np.int64),
            "val": np.empty(0, dtype=np.int64),
            "test": np.empty(0, dtype=np.int64),
        }
        corpus = corpus_from_documents(Vocabulary.from_size(4), docs, split)
        out = tfidf_transform(corpus)
        assert np.all(out.matrix[:, 0].toarray() == 0.0)
        # and the zeroed term leaves the sparsity pattern
        assert out.matrix.nnz == corpus.matrix.nnz - 3

    def test_hand_computed_weight(self):
        docs = [Document(0, {0: 3.0, 1: 1.0}), Document(1, {1: 2.0})]
        split = {
            "train": np.arange(2, dtype=np.int64),
            "val": np.empty(0, dtype=np.int64),
            "test": np.empty(0, dtype=np.int64),
        }
        corpus = corpus_from_documents(Vocabulary.from_size(2), docs, split)
        with pytest.warns(UserWarning):  # doc 1 ends up all-zero
            out = tfidf_transform(corpus)
        # term 0 in doc 0 only, count 3 -> 3 * ln(2/1)
        assert out.matrix[0, 0] == pytest.approx(3.0 * math.log(2.0), abs=1e-15)
        # term 1 in both docs -> ln(2/2) = 0
        assert out.matrix[0, 1] == 0.0

    def test_double_application_differs(self, tiny_corpus):
        once = tfidf_transform(tiny_corpus)
        twice = tfidf_transform(once)
        assert not np.array_equal(
            np.sort(once.matrix.data), np.sort(twice.matrix.data)
        )

    def test_sparsity_pattern_preserved_except_df_n(self):
        rng = np.random.default_rng(0)
        docs = []
        for i in range(8):
            weights = {int(t): float(rng.integers(1, 5)) for t in rng.choice(12, 4, replace=False)}
            weights[0] = 1.0  # df = N for term 0
            docs.append(Document(i, weights))
        split = {
            "train": np.arange(8, dtype=np.int64),
            "val": np.empty(0, dtype=np.int64),
            "test": np.empty(0, dtype=np.int64),
        }
        corpus = corpus_from_documents(Vocabulary.from_size(12), docs, split)
        out = tfidf_transform(corpus)
        before = set(zip(*corpus.matrix.nonzero()))
        after = set(zip(*out.matrix.nonzero()))
        assert after == {(i, j) for i, j in before if j != 0}

    def test_all_zero_row_flagged(self):
        docs = [Document(0, {0: 1.0}), Document(1, {0: 2.0, 1: 1.0})]
        split = {
            "train": np.arange(2, dtype=np.int64),
            "val": np.empty(0, dtype=np.int64),
            "test": np.empty(0, dtype=np.int64),
        }
        corpus = corpus_from_documents(Vocabulary.from_size(2), docs, split)
        with pytest.warns(UserWarning, match="all-zero rows for doc_ids \\[0\\]"):
            out = tfidf_transform(corpus)
        assert out.n_docs == 2  # row kept, indexing stable

    def test_empty_corpus_rejected(self):
        split = {name: np.empty(0, dtype=np.int64) for name in ("train", "val", "test")}
        corpus = corpus_from_documents(Vocabulary.from_size(2), [], split)
        with pytest.raises(DataError, match="empty"):
            tfidf_transform(corpus)
