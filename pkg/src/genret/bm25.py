"""Okapi BM25 over an inverted index of truncated documents."""

from __future__ import annotations

import dataclasses
import math
from collections import Counter

from .corpus import truncate_document


@dataclasses.dataclass
class InvertedIndex:
    postings: dict[str, list[tuple[int, int]]]
    doc_lengths: list[int]
    avgdl: float
    df: dict[str, int]

    @property
    def n_docs(self):
        return len(self.doc_lengths)


def build_index(corpus, max_body_tokens=100):
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    postings: dict[str, list[tuple[int, int]]] = {}
    lengths = []
    for doc in corpus.documents:
        tokens = truncate_document(doc, max_body_tokens)
        lengths.append(len(tokens))
        for term, tf in sorted(Counter(tokens).items()):
            postings.setdefault(term, []).append((doc.index, tf))
    df = {t: len(p) for t, p in postings.items()}
    return InvertedIndex(postings, lengths, sum(lengths) / len(lengths), df)


def idf(index, term):
    df = index.df.get(term, 0)
    return math.log((index.n_docs - df + 0.5) / (df + 0.5) + 1.0)


def bm25_search(index, query_tokens, top_k, k1=1.2, b=0.75):
    """[(doc index, score)] sorted by score, ties by document index."""
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    scores: dict[int, float] = {}
    for term in query_tokens:
        if term not in index.postings:
            continue
        w = idf(index, term)
        for doc, tf in index.postings[term]:
            norm = k1 * (1 - b + b * index.doc_lengths[doc] / index.avgdl)
            scores[doc] = scores.get(doc, 0.0) + w * tf * (k1 + 1) / (tf + norm)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:top_k]
