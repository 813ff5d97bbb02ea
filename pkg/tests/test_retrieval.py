import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgreader import tensor as T
from kgreader.pipeline.experiment import embed_texts, retrieve_passages, retrieve_topk
from kgreader.reader import Reader, ReaderConfig, score_passage, top_k
from kgreader.textproc import Vocab


def sort_oracle(q, corpus, k):
    scored = sorted(((-float(np.dot(q, p)), i) for i, p in enumerate(corpus)))
    return [i for _, i in scored[:k]]


def test_score_examples():
    assert score_passage([1, 0], [0, 1]) == 0
    assert score_passage([1, 1], [1, 1]) == 2
    with pytest.raises(T.ShapeError):
        score_passage([1, 0, 0], [1, 0])


def test_five_passage_top2_matches_sort():
    rng = np.random.default_rng(0)
    q, corpus = rng.normal(size=4), rng.normal(size=(5, 4))
    assert retrieve_topk(q, corpus, 2) == sort_oracle(q, corpus, 2)


def test_fifty_passage_fixture_matches_sort():
    rng = np.random.default_rng(1)
    for _ in range(20):
        q, corpus = rng.normal(size=8), rng.normal(size=(50, 8))
        assert retrieve_topk(q, corpus, 5) == sort_oracle(q, corpus, 5)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-3, 3), min_size=1, max_size=12), st.integers(1, 12))
def test_ties_follow_corpus_order(scores, k):
    # integer scores produce plenty of ties
    corpus = np.array(scores, dtype=float)[:, None]
    assert retrieve_topk(np.ones(1), corpus, min(k, len(scores))) == sort_oracle(np.ones(1), corpus, k)


def test_identical_embeddings_keep_corpus_order():
    assert retrieve_topk(np.ones(3), np.ones((6, 3)), 4) == [0, 1, 2, 3]
    assert top_k([0.5] * 3, 3) == [0, 1, 2]


def test_k_equal_to_corpus_returns_everything_score_ordered():
    corpus = np.array([[0.1], [0.9], [0.4]])
    assert retrieve_topk(np.ones(1), corpus, 3) == [1, 2, 0]


def test_k_beyond_corpus_warns_and_returns_all(caplog):
    with caplog.at_level(logging.WARNING):
        out = retrieve_topk(np.ones(2), np.eye(2), 5)
    assert out == [0, 1] and "exceeds corpus size" in caplog.text


def test_empty_corpus_rejected():
    with pytest.raises(ValueError):
        retrieve_topk(np.ones(2), np.zeros((0, 2)), 1)


def test_text_retrieval_is_deterministic():
    vocab = Vocab.build(["who wrote swan lake tchaikovsky petipa ballet music dance"])
    model = Reader(ReaderConfig(vocab_size=len(vocab), d=8, heads=2, enc_layers=2, L=1), seed=0)
    corpus = ["swan lake ballet", "tchaikovsky music", "petipa dance", "music music"]
    embs = embed_texts(model, corpus, vocab)
    assert embs.shape == (4, 8) and embs.dtype == np.float64
    a = retrieve_passages(model, "who wrote swan lake", corpus, vocab, 2)
    b = retrieve_passages(model, "who wrote swan lake", corpus, vocab, 2)
    assert a == b and len(a) == 2 and set(a) <= set(corpus)
