"""Extractive pseudo-query generation and assembly of the indexing training set."""

from __future__ import annotations

import math
from collections import Counter

import numpy as np

from .corpus import Origin, Query, truncate_document

MIN_WINDOW, MAX_WINDOW = 4, 8


def document_frequencies(corpus, max_body_tokens=100):
    df = Counter()
    for doc in corpus.documents:
        df.update(set(truncate_document(doc, max_body_tokens)))
    return df


def token_weights(tokens, df, n_docs):
    """TF-IDF weight of each position's token within this document."""
    tf = Counter(tokens)
    return np.array([tf[t] * (math.log((1 + n_docs) / (1 + df.get(t, 0))) + 1.0) for t in tokens])


def best_window(weights, length, blocked):
    """Start of the highest-mass window of ``length`` avoiding ``blocked`` positions.

    Ties go to the earliest start; returns None when every window overlaps.
    """
    csum = np.concatenate([[0.0], np.cumsum(weights)])
    best, best_mass = None, -math.inf
    for s in range(len(weights) - length + 1):
        if any(p in blocked for p in range(s, s + length)):
            continue
        mass = csum[s + length] - csum[s]
        if mass > best_mass + 1e-12:
            best, best_mass = s, mass
    return best


def generate_pseudo_queries(document, n=3, seed=0, df=None, n_docs=1,
                            window=(MIN_WINDOW, MAX_WINDOW), max_body_tokens=100):
    """``n`` contiguous high-TF-IDF windows of the truncated document.

    Window lengths are drawn from ``window`` with the seed; each window is
    the heaviest one not overlapping earlier picks (overlap is allowed once
    the document runs out of room).
    """
    tokens = truncate_document(document, max_body_tokens)
    if len(tokens) < window[0]:
        return [Query(tokens, document.index, Origin.PSEUDO, f"{document.external_id}-qg0")]
    rng = np.random.default_rng([seed, document.index])
    weights = token_weights(tokens, df or {}, n_docs)
    blocked: set[int] = set()
    out = []
    for j in range(n):
        length = min(int(rng.integers(window[0], window[1] + 1)), len(tokens))
        start = best_window(weights, length, blocked)
        if start is None:
            start = best_window(weights, length, set())
        blocked.update(range(start, start + length))
        out.append(Query(tokens[start:start + length], document.index, Origin.PSEUDO,
                         f"{document.external_id}-qg{j}"))
    return out


def build_training_set(supervised, corpus, n=3, seed=0, use_pseudo=True):
    """Supervised queries followed by ``n`` pseudo queries per document."""
    queries = list(supervised)
    if not use_pseudo:
        return queries
    df = document_frequencies(corpus)
    for doc in corpus.documents:
        queries.extend(generate_pseudo_queries(doc, n, seed, df, len(corpus)))
    return queries
