import json

import pytest
from hypothesis import given, strategies as st

from genret.corpus import (
    BOS, EOS, PAD, UNK, CorpusError, Document, Origin, Query, generate_synthetic_corpus,
    load_corpus, load_queries, make_corpus, save_corpus, save_queries, split, truncate_document,
)


def write_lines(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records))


def test_load_single_record(tmp_path):
    p = tmp_path / "c.jsonl"
    write_lines(p, [{"external_id": "d1", "title": "t", "body": "a b"}])
    corpus = load_corpus(p)
    assert len(corpus) == 1
    assert {"t", "a", "b"} <= set(corpus.vocabulary.words())
    assert corpus.vocabulary.itos[:4] == [UNK, PAD, BOS, EOS]


def test_empty_file_is_an_error(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text("")
    with pytest.raises(CorpusError, match="empty corpus"):
        load_corpus(p)


def test_malformed_line_reports_line_number(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text('{"external_id": "a", "title": "t", "body": "b"}\n{not json\n')
    with pytest.raises(CorpusError, match=":2:"):
        load_corpus(p)


def test_duplicate_external_id(tmp_path):
    p = tmp_path / "c.jsonl"
    write_lines(p, [{"external_id": "a", "title": "t", "body": "b"}] * 2)
    with pytest.raises(CorpusError, match="duplicate"):
        load_corpus(p)


def test_paper_sized_corpus_loads_every_document(tmp_path):
    p = tmp_path / "c.jsonl"
    write_lines(p, [{"external_id": f"d{i}", "title": f"t{i}", "body": "w " * 150} for i in range(2051)])
    assert len(load_corpus(p)) == 2051


def test_round_trip_preserves_token_indices(tmp_path):
    corpus, queries, _ = generate_synthetic_corpus(3, 20, 2)
    save_corpus(corpus, tmp_path / "c.jsonl")
    again = load_corpus(tmp_path / "c.jsonl")
    assert again.vocabulary.itos == corpus.vocabulary.itos
    assert again.documents == corpus.documents
    save_queries(queries, corpus, tmp_path / "q.jsonl")
    assert load_queries(tmp_path / "q.jsonl", again) == queries


def doc(body_len, title=("t1", "t2")):
    return Document(0, "d", tuple(title), tuple(f"w{i}" for i in range(body_len)))


@pytest.mark.parametrize("body_len,limit,expected", [(5, 100, 7), (150, 100, 102), (10, 1, 3)])
def test_truncate_document(body_len, limit, expected):
    out = truncate_document(doc(body_len), limit)
    assert len(out) == expected
    assert out[:2] == ("t1", "t2")
    assert out[2:] == tuple(f"w{i}" for i in range(min(body_len, limit)))


@given(st.integers(1, 300), st.integers(1, 200))
def test_truncate_is_idempotent(body_len, limit):
    d = doc(body_len)
    once = truncate_document(d, limit)
    twice = truncate_document(Document(0, "d", d.title, once[len(d.title):]), limit)
    assert once == twice


def test_synthetic_generation_is_deterministic(tmp_path):
    a = generate_synthetic_corpus(7, 30, 3)
    b = generate_synthetic_corpus(7, 30, 3)
    save_corpus(a[0], tmp_path / "a.jsonl")
    save_corpus(b[0], tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert a[1] == b[1] and a[2] == b[2]


def test_synthetic_query_count():
    corpus, queries, lexicon = generate_synthetic_corpus(7, 200, 5)
    assert len(queries) == 1000
    assert len(lexicon) == 200
    assert all(q.origin is Origin.SUPERVISED for q in queries)
    assert all(t in corpus.vocabulary for q in queries for t in q.text)


def test_synthetic_corpus_is_bm25_retrievable():
    from genret.bm25 import bm25_search, build_index
    from genret.metrics import hits_at_k

    corpus, queries, _ = generate_synthetic_corpus(7, 200, 5)
    index = build_index(corpus)
    ranked = [[d for d, _ in bm25_search(index, q.text, 10)] for q in queries]
    assert hits_at_k(ranked, [q.gold_doc for q in queries], 10) > 90.0


def qs(n_docs, per_doc):
    return [Query((f"x{d}", f"y{j}"), d, Origin.SUPERVISED, f"{d}-{j}")
            for d in range(n_docs) for j in range(per_doc)]


def test_split_sizes_and_determinism():
    queries = qs(5, 2)
    train, test = split(queries, 0.2, seed=1)
    assert (len(train), len(test)) == (8, 2)
    assert split(queries, 0.2, seed=1) == (train, test)
    assert set(train).isdisjoint(test) and set(train) | set(test) == set(queries)


def test_split_keeps_a_training_query_for_every_document():
    queries = qs(200, 5)
    train, test = split(queries, 0.2, seed=3)
    assert len(test) == 200
    assert {q.gold_doc for q in train} == set(range(200))


@pytest.mark.parametrize("fraction", [0.0, 1.0])
def test_split_rejects_bad_fraction(fraction):
    with pytest.raises(ValueError):
        split(qs(2, 2), fraction, 0)


def test_split_needs_two_queries():
    with pytest.raises(ValueError):
        split(qs(1, 1), 0.5, 0)


def test_make_corpus_rejects_empty_title():
    with pytest.raises(CorpusError):
        make_corpus([("a", (), ("b",))])
