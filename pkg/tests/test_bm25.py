import math

import pytest

from genret.bm25 import bm25_search, build_index
from genret.corpus import make_corpus, truncate_document


def hand_corpus():
    return make_corpus([
        ("d0", ("apple",), ("pie", "apple", "crust", "sugar")),
        ("d1", ("banana",), ("bread", "banana", "banana")),
        ("d2", ("cherry",), ("pie", "cherry", "tart", "apple", "jam", "cream")),
    ])


def spreadsheet_bm25(doc_tokens, all_docs, query, k1=1.2, b=0.75):
    n = len(all_docs)
    avgdl = sum(len(d) for d in all_docs) / n
    score = 0.0
    for term in query:
        df = sum(term in d for d in all_docs)
        tf = doc_tokens.count(term)
        if df == 0 or tf == 0:
            continue
        w = math.log((n - df + 0.5) / (df + 0.5) + 1)
        score += w * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(doc_tokens) / avgdl))
    return score


def test_scores_match_formula():
    corpus = hand_corpus()
    docs = [list(truncate_document(d)) for d in corpus.documents]
    query = ("apple", "pie")
    out = bm25_search(build_index(corpus), query, 3)
    assert [d for d, _ in out] == [0, 2]
    for d, s in out:
        assert abs(s - spreadsheet_bm25(docs[d], docs, query)) < 1e-9


def test_single_posting_doc_ranks_first():
    out = bm25_search(build_index(hand_corpus()), ("tart",), 3)
    assert out[0][0] == 2 and len(out) == 1


def test_oov_query_is_empty():
    assert bm25_search(build_index(hand_corpus()), ("zzz",), 5) == []


def test_one_doc_index_and_conservation():
    corpus = make_corpus([("d", ("a",), ("b", "a", "c"))])
    index = build_index(corpus)
    assert all(len(p) == 1 for p in index.postings.values())
    assert sum(tf for p in index.postings.values() for _, tf in p) == index.doc_lengths[0] == 4
    assert build_index(corpus) == index


def test_postings_sorted_and_truncated():
    corpus = make_corpus([("d", ("t",), tuple(f"w{i}" for i in range(150))), ("e", ("t",), ("w1",))])
    index = build_index(corpus)
    assert index.doc_lengths == [101, 2]
    assert "w120" not in index.postings
    assert all(p == sorted(p) for p in index.postings.values())


def test_ties_break_by_document_index():
    corpus = make_corpus([("a", ("x",), ("y",)), ("b", ("x",), ("y",))])
    out = bm25_search(build_index(corpus), ("x",), 2)
    assert [d for d, _ in out] == [0, 1] and out[0][1] == out[1][1]


def test_more_occurrences_never_lower_the_score():
    base = [("o", ("z",), ("q", "r", "s"))]
    low = make_corpus(base + [("d", ("t",), ("k", "m", "n"))])
    high = make_corpus(base + [("d", ("t",), ("k", "k", "n"))])
    s_low = dict(bm25_search(build_index(low), ("k",), 2))[1]
    s_high = dict(bm25_search(build_index(high), ("k",), 2))[1]
    assert s_high >= s_low


def test_bad_top_k():
    with pytest.raises(ValueError):
        bm25_search(build_index(hand_corpus()), ("pie",), 0)
