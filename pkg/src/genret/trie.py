"""Prefix tree over docids and trie-constrained beam search.

Any decoder works as long as it offers ``encode(query_ids) -> memory`` and
``decode_next(memory, prefixes) -> (B, n_out) log-probabilities`` where all
prefixes in one call have the same length.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np


class TrieError(ValueError):
    pass


@dataclasses.dataclass
class TrieNode:
    children: dict[int, "TrieNode"] = dataclasses.field(default_factory=dict)
    doc: int | None = None  # set only on terminal (EOS) nodes


class PrefixTrie:
    def __init__(self, eos):
        self.eos = eos
        self.root = TrieNode()
        self.n_terminals = 0

    def insert(self, digits, doc):
        node = self.root
        for tok in list(digits) + [self.eos]:
            node = node.children.setdefault(tok, TrieNode())
        if node.doc is not None:
            raise TrieError(f"duplicate docid {list(digits)} (documents {node.doc} and {doc})")
        node.doc = doc
        self.n_terminals += 1

    def node_at(self, prefix):
        node = self.root
        for tok in prefix:
            if tok not in node.children:
                raise TrieError(f"prefix {list(prefix)} is not a path in the docid trie")
            node = node.children[tok]
        return node

    def paths(self):
        """Every (digits, doc) pair reachable from the root."""
        out, stack = [], [((), self.root)]
        while stack:
            prefix, node = stack.pop()
            if node.doc is not None:
                out.append((prefix[:-1], node.doc))
            for tok, child in node.children.items():
                stack.append((prefix + (tok,), child))
        return sorted(out)

    def node_count(self):
        count, stack = 0, [self.root]
        while stack:
            node = stack.pop()
            count += 1
            stack.extend(node.children.values())
        return count


def build_trie(docid_map):
    if len(docid_map) == 0:
        raise TrieError("empty docid map")
    trie = PrefixTrie(docid_map.eos)
    for doc, digits in enumerate(docid_map.forward):
        trie.insert(digits, doc)
    return trie


def allowed_tokens(trie, prefix):
    node = trie.node_at(prefix)
    if node.doc is not None:
        raise TrieError("prefix already ends with EOS")
    return set(node.children)


def log_score_docid(model, query_ids, targets, memory=None):
    """Sum over steps of log p(y_m | y_<m, q); ``targets`` includes EOS."""
    if memory is None:
        memory = model.encode(query_ids)
    total = 0.0
    for m, tok in enumerate(targets):
        total += float(model.decode_next(memory, [list(targets[:m])])[0][tok])
    return total


def score_docid(model, query_ids, targets):
    """Product of per-step probabilities of the docid tokens (teacher forced)."""
    return math.exp(log_score_docid(model, query_ids, targets))


@dataclasses.dataclass
class Hypothesis:
    prefix: tuple[int, ...]
    log_score: float
    node: TrieNode


def constrained_beam_search(model, query_ids, trie, beam_width, top_k, memory=None, with_tokens=False):
    """Ranked [(doc index, score)] of at most ``top_k`` valid docids.

    ``with_tokens`` appends the emitted token sequence (digits then EOS)
    to every result.

    Per-step log-probabilities come from the unconstrained decoder
    distribution; the trie only decides which continuations are expanded.
    """
    if not 1 <= top_k <= beam_width:
        raise ValueError("need beam_width >= top_k >= 1")
    if len(query_ids) == 0:
        raise ValueError("empty query")
    if memory is None:
        memory = model.encode(query_ids)
    live = [Hypothesis((), 0.0, trie.root)]
    finished = []
    while live:
        logp = model.decode_next(memory, np.array([h.prefix for h in live], dtype=np.int64))
        candidates = []
        for hyp, row in zip(live, logp):
            for tok, child in hyp.node.children.items():
                candidates.append(Hypothesis(hyp.prefix + (tok,), hyp.log_score + float(row[tok]), child))
        candidates.sort(key=lambda h: (-h.log_score, h.prefix))
        live = []
        for hyp in candidates[:beam_width]:
            if hyp.node.doc is not None:
                finished.append(hyp)
            else:
                live.append(hyp)
        if len(finished) >= top_k and live:
            kth = sorted(h.log_score for h in finished)[-top_k]
            if max(h.log_score for h in live) < kth:
                break
    finished.sort(key=lambda h: (-h.log_score, h.prefix))
    if with_tokens:
        return [(h.node.doc, math.exp(h.log_score), h.prefix) for h in finished[:top_k]]
    return [(h.node.doc, math.exp(h.log_score)) for h in finished[:top_k]]
