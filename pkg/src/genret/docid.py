"""Semantic docids: embed documents, cluster them recursively, read off the tree path."""

from __future__ import annotations

import dataclasses
import zlib
from collections import Counter

import numpy as np

from .corpus import truncate_document

EMBED_DIM = 256


class DocidError(ValueError):
    pass


def _char_ngrams(token, n=3):
    padded = f"<{token}>"
    return [padded[i:i + n] for i in range(len(padded) - n + 1)]


def embed_documents(corpus, dim=EMBED_DIM, n=3, max_body_tokens=100):
    """Hashed character-n-gram TF-IDF of each truncated document, L2-normalised.

    Returns an (n_docs, dim) array; row i is document i.
    """
    if len(corpus) == 0:
        raise DocidError("empty corpus")
    counts = np.zeros((len(corpus), dim))
    for doc in corpus.documents:
        grams = Counter()
        for tok in truncate_document(doc, max_body_tokens):
            grams.update(_char_ngrams(tok, n))
        for gram, c in grams.items():
            counts[doc.index, zlib.crc32(gram.encode("utf-8")) % dim] += c
    df = (counts > 0).sum(axis=0)
    idf = np.log((1.0 + len(corpus)) / (1.0 + df)) + 1.0
    vectors = counts * idf
    norms = np.linalg.norm(vectors, axis=1)
    for doc in corpus.documents:
        if norms[doc.index] == 0:
            raise DocidError(f"document {doc.external_id!r} has no character n-grams")
    return vectors / norms[:, None]


# k-means ----------------------------------------------------------------------------

def _sq_dist(x, c):
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp(x, k, rng):
    centers = [int(rng.integers(len(x)))]
    d2 = _sq_dist(x, x[centers]).min(axis=1)
    while len(centers) < k:
        total = d2.sum()
        if total <= 0:
            pool = [i for i in range(len(x)) if i not in centers]
            nxt = int(pool[rng.integers(len(pool))])
        else:
            nxt = int(rng.choice(len(x), p=d2 / total))
        centers.append(nxt)
        d2 = np.minimum(d2, _sq_dist(x, x[[nxt]])[:, 0])
    return x[centers].copy()


def kmeans(x, k, rng, max_iter=50, tol=1e-6):
    """Lloyd iterations from k-means++ seeds.

    Ties go to the lowest centroid index; an empty cluster is refilled with
    the point farthest from its current centroid. Returns (labels, centroids).
    """
    k = min(k, len(x))
    centroids = _kmeans_pp(x, k, rng)
    for _ in range(max_iter):
        d2 = _sq_dist(x, centroids)
        labels = d2.argmin(axis=1)
        far = d2[np.arange(len(x)), labels]
        new = np.empty_like(centroids)
        used = set()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = x[members].mean(axis=0)
                continue
            for i in np.argsort(-far, kind="stable"):
                if int(i) not in used:
                    used.add(int(i))
                    new[j] = x[i]
                    labels[i] = j
                    break
        shift = np.sqrt(((new - centroids) ** 2).sum(axis=1)).max()
        centroids = new
        if shift < tol:
            break
    labels = _sq_dist(x, centroids).argmin(axis=1)
    return labels, centroids


@dataclasses.dataclass
class ClusterNode:
    members: tuple[int, ...]
    path: tuple[int, ...] = ()
    children: list["ClusterNode"] = dataclasses.field(default_factory=list)
    centroids: np.ndarray | None = None

    @property
    def is_leaf(self):
        return not self.children

    def leaves(self):
        if self.is_leaf:
            yield self
        for child in self.children:
            yield from child.leaves()

    def depth(self):
        return 0 if self.is_leaf else 1 + max(c.depth() for c in self.children)


def hierarchical_cluster(embeddings, k=10, leaf_cap=100, seed=0):
    """Recursive k-means; nodes with more than ``leaf_cap`` members are split."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if leaf_cap < 1:
        raise ValueError("leaf_cap must be >= 1")
    embeddings = np.asarray(embeddings, dtype=np.float64)
    root = ClusterNode(tuple(range(len(embeddings))))
    stack = [root]
    while stack:
        node = stack.pop()
        if len(node.members) <= leaf_cap:
            continue
        idx = np.array(node.members)
        rng = np.random.default_rng([seed, len(node.path), *node.path])
        labels, centroids = kmeans(embeddings[idx], k, rng)
        groups = [tuple(int(m) for m in idx[labels == j]) for j in range(len(centroids))]
        kept = [(g, centroids[j]) for j, g in enumerate(groups) if g]
        if len(kept) < 2:
            continue  # degenerate split: position digits disambiguate the members
        kept.sort(key=lambda gc: gc[0][0])
        node.centroids = np.array([c for _, c in kept])
        node.children = [ClusterNode(g, node.path + (j,)) for j, (g, _) in enumerate(kept)]
        stack.extend(reversed(node.children))
    return root


# docids -------------------------------------------------------------------------------

def _position_digits(pos, width, k):
    digits = []
    for _ in range(width):
        digits.append(pos % k)
        pos //= k
    return tuple(reversed(digits))


@dataclasses.dataclass
class DocidMap:
    """Bijection between document indices and digit-sequence docids (EOS implicit)."""

    forward: list[tuple[int, ...]]
    k: int
    reverse: dict[str, int] = dataclasses.field(init=False)

    def __post_init__(self):
        self.reverse = {}
        for idx, docid in enumerate(self.forward):
            key = docid_string(docid)
            if key in self.reverse:
                raise DocidError(f"duplicate docid {key!r}")
            self.reverse[key] = idx

    def __len__(self):
        return len(self.forward)

    @property
    def eos(self):
        return self.k

    def targets(self, doc_index):
        """Decoder target ids: the docid digits followed by EOS."""
        return list(self.forward[doc_index]) + [self.k]

    def lookup(self, tokens):
        """Document index for a digit sequence (trailing EOS optional), or None."""
        tokens = list(tokens)
        if tokens and tokens[-1] == self.k:
            tokens = tokens[:-1]
        return self.reverse.get(docid_string(tokens))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# k={self.k}\n")
            for idx, docid in enumerate(self.forward):
                fh.write(f"{idx}\t{docid_string(docid)}\n")

    @classmethod
    def load(cls, path):
        k, rows = None, {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if line.startswith("# k="):
                    k = int(line[4:])
                    continue
                if not line.strip():
                    continue
                try:
                    idx, tokens = line.split("\t")
                    rows[int(idx)] = tuple(int(t) for t in tokens.split())
                except ValueError as exc:
                    raise DocidError(f"{path}:{lineno}: malformed docid line") from exc
        if k is None:
            raise DocidError(f"{path}: missing '# k=' header")
        if sorted(rows) != list(range(len(rows))):
            raise DocidError(f"{path}: document indices are not contiguous")
        return cls([rows[i] for i in range(len(rows))], k)


def docid_string(tokens):
    return " ".join(str(t) for t in tokens)


def assign_docids(tree, k, n_docs=None):
    """Path digits down to the leaf, then fixed-width base-k position digits."""
    n_docs = n_docs if n_docs is not None else len(tree.members)
    forward: list[tuple[int, ...] | None] = [None] * n_docs
    for leaf in tree.leaves():
        members = sorted(leaf.members)
        width, cap = 1, k
        while cap < len(members):
            width += 1
            cap *= k
        for pos, doc in enumerate(members):
            forward[doc] = leaf.path + _position_digits(pos, width, k)
    if any(f is None for f in forward):
        raise DocidError("cluster tree does not cover every document")
    return DocidMap(forward, k)


def build_docids(corpus, k=10, leaf_cap=100, seed=0):
    emb = embed_documents(corpus)
    tree = hierarchical_cluster(emb, k, leaf_cap, seed)
    return assign_docids(tree, k, len(corpus)), tree
