import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from genret.metrics import (
    align, corpus_wer, eer, entity_corrupted, error_counts, format_percent, hits_at_k,
    split_entity_noise, wer,
)


def ranked_with_gold_at(rank, gold=0, width=20):
    others = [d for d in range(1, width + 1) if d != gold]
    out = others[:rank - 1] + [gold] + others[rank - 1:]
    return out


def test_hits_hand_fixture():
    ranks = [1, 2, 11, 3]
    lists = [ranked_with_gold_at(r) for r in ranks]
    assert hits_at_k(lists, [0] * 4, 1) == 25.0
    assert hits_at_k(lists, [0] * 4, 10) == 75.0
    assert format_percent(hits_at_k(lists, [0] * 4, 1)) == "25.00"


def test_hits_edges():
    assert hits_at_k([[0]], [0], 1) == 100.0
    assert hits_at_k([[]], [0], 10) == 0.0
    with pytest.raises(ValueError):
        hits_at_k([[0]], [0], 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 15), min_size=1, max_size=20))
def test_hits_monotone_in_k(ranks):
    lists = [ranked_with_gold_at(r) for r in ranks]
    values = [hits_at_k(lists, [0] * len(ranks), k) for k in range(1, 16)]
    assert values == sorted(values)


def test_wer_examples():
    assert wer(("a", "b", "c", "d"), ("a", "x", "c", "d")) == 0.25
    assert wer(("a",), ("a",)) == 0.0
    assert wer(("a", "b"), ("x", "y", "z", "w")) == 2.0
    with pytest.raises(ValueError):
        wer((), ("a",))


def brute_distance(ref, hyp):
    # plain recursion over prefixes, memoised
    memo = {}

    def d(i, j):
        if (i, j) not in memo:
            if i == 0 or j == 0:
                memo[i, j] = i + j
            else:
                memo[i, j] = min(d(i - 1, j) + 1, d(i, j - 1) + 1,
                                 d(i - 1, j - 1) + (ref[i - 1] != hyp[j - 1]))
        return memo[i, j]

    return d(len(ref), len(hyp))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from("abc"), max_size=10), st.lists(st.sampled_from("abc"), max_size=10))
def test_alignment_cost_matches_brute_force(ref, hyp):
    assert sum(error_counts(ref, hyp)) == brute_distance(ref, hyp)
    ops = align(ref, hyp)
    assert [r for op, r, _ in ops if op != "ins"] == list(range(len(ref)))
    assert [h for op, _, h in ops if op != "del"] == list(range(len(hyp)))


def test_corpus_wer_pools_tokens():
    refs = [("a", "b"), ("c", "d", "e", "f")]
    hyps = [("a", "x"), ("c", "d", "e", "f")]
    assert corpus_wer(refs, hyps) == pytest.approx(1 / 6)


LEXICON = [("new", "york"), ("paris",)]


def test_entity_corruption_cases():
    assert entity_corrupted(("go", "paris"), ("go", "parish"), LEXICON) == (True, True)
    assert entity_corrupted(("go", "paris"), ("went", "paris"), LEXICON) == (True, False)
    assert entity_corrupted(("in", "new", "york"), ("in", "new", "uh", "york"), LEXICON) == (True, True)
    assert entity_corrupted(("hello",), ("yellow",), LEXICON) == (False, False)


def test_eer_is_utterance_level():
    clean = [("go", "paris"), ("go", "paris"), ("hello",), ("new", "york", "now")]
    noisy = [("go", "parish"), ("no", "paris"), ("yellow",), ("new", "york", "cow")]
    assert eer(clean, noisy, LEXICON) == pytest.approx(1 / 3)


def test_empty_lexicon_warns():
    with pytest.warns(UserWarning):
        assert eer([("a",)], [("b",)], []) == 0.0


def test_split_partitions_exactly():
    rng = np.random.default_rng(0)
    words = ["new", "york", "paris", "go", "to", "the"]
    clean = [tuple(rng.choice(words, size=rng.integers(1, 6))) for _ in range(200)]
    noisy = [tuple(t if rng.random() > 0.2 else "x" for t in q) for q in clean]
    ent, other = split_entity_noise(clean, noisy, LEXICON)
    assert sorted(ent + other) == list(range(200)) and not set(ent) & set(other)
    assert all(entity_corrupted(clean[i], noisy[i], LEXICON)[1] for i in ent)
