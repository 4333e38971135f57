"""Hits@k, word error rate with alignments, and utterance-level entity error rate."""

from __future__ import annotations

import warnings

import numpy as np


def hits_at_k(ranked_lists, gold_docs, k):
    """Percentage of queries whose gold document is among the first k results."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(ranked_lists) != len(gold_docs):
        raise ValueError("need one ranked list per query")
    if not gold_docs:
        return 0.0
    hit = sum(1 for ranked, gold in zip(ranked_lists, gold_docs) if gold in list(ranked)[:k])
    return 100.0 * hit / len(gold_docs)


def format_percent(value):
    return f"{value:.2f}"


def align(ref, hyp):
    """Minimal uniform-cost edit alignment.

    Returns a list of (op, ref_pos, hyp_pos) with op in {"match", "sub", "del",
    "ins"}. For insertions ref_pos is the index of the next reference token
    (so the insertion sits just before it).
    """
    n, m = len(ref), len(hyp)
    dp = np.zeros((n + 1, m + 1), dtype=np.int64)
    dp[:, 0] = np.arange(n + 1)
    dp[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = dp[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            dp[i, j] = min(diag, dp[i - 1, j] + 1, dp[i, j - 1] + 1)
    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dp[i, j] == dp[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            ops.append(("match" if ref[i - 1] == hyp[j - 1] else "sub", i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and dp[i, j] == dp[i - 1, j] + 1:
            ops.append(("del", i - 1, None))
            i -= 1
        else:
            ops.append(("ins", i, j - 1))
            j -= 1
    return ops[::-1]


def error_counts(ref, hyp):
    """(substitutions, deletions, insertions) of a minimal alignment."""
    counts = {"sub": 0, "del": 0, "ins": 0}
    for op, _, _ in align(ref, hyp):
        if op != "match":
            counts[op] += 1
    return counts["sub"], counts["del"], counts["ins"]


def wer(reference, hypothesis):
    """(S + D + I) / len(reference); may exceed 1."""
    if len(reference) == 0:
        raise ValueError("empty reference")
    return sum(error_counts(reference, hypothesis)) / len(reference)


def corpus_wer(references, hypotheses):
    """Total edits over total reference tokens."""
    edits = sum(sum(error_counts(r, h)) for r, h in zip(references, hypotheses))
    words = sum(len(r) for r in references)
    if words == 0:
        raise ValueError("empty reference set")
    return edits / words


def entity_spans(tokens, lexicon):
    """(start, end) spans of every lexicon entry occurring in ``tokens``."""
    tokens = tuple(tokens)
    spans = []
    for ent in lexicon:
        ent = tuple(ent)
        width = len(ent)
        for s in range(len(tokens) - width + 1):
            if tokens[s:s + width] == ent:
                spans.append((s, s + width))
    return sorted(set(spans))


def entity_corrupted(clean, noisy, lexicon):
    """(has_entity, any_entity_span_altered) for one clean/noisy pair."""
    spans = entity_spans(clean, lexicon)
    if not spans:
        return False, False
    ops = align(tuple(clean), tuple(noisy))
    bad_ref = {r for op, r, _ in ops if op in ("sub", "del")}
    inserted_before = {r for op, r, _ in ops if op == "ins"}
    for s, e in spans:
        if any(p in bad_ref for p in range(s, e)):
            return True, True
        if any(p in inserted_before for p in range(s + 1, e)):
            return True, True
    return True, False


def eer(clean_queries, noisy_queries, lexicon):
    """Fraction of entity-bearing utterances whose entity span was corrupted."""
    if not lexicon:
        warnings.warn("empty entity lexicon; EER reported as 0.0")
        return 0.0
    bearing = corrupted = 0
    for clean, noisy in zip(clean_queries, noisy_queries):
        has, bad = entity_corrupted(clean, noisy, lexicon)
        bearing += has
        corrupted += bad
    return corrupted / bearing if bearing else 0.0


def split_entity_noise(clean_queries, noisy_queries, lexicon):
    """Index lists (entity-noise subset, non-entity subset); together they cover every pair."""
    entity, other = [], []
    for i, (clean, noisy) in enumerate(zip(clean_queries, noisy_queries)):
        _, bad = entity_corrupted(clean, noisy, lexicon)
        (entity if bad else other).append(i)
    return entity, other
