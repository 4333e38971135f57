"""Documents, queries, vocabulary, and the seeded synthetic benchmark."""

from __future__ import annotations

import dataclasses
import enum
import json
from pathlib import Path

import numpy as np

UNK, PAD, BOS, EOS = "<unk>", "<pad>", "<bos>", "<eos>"
RESERVED = (UNK, PAD, BOS, EOS)
UNK_ID, PAD_ID, BOS_ID, EOS_ID = range(4)


class CorpusError(ValueError):
    pass


class Origin(str, enum.Enum):
    SUPERVISED = "supervised"
    PSEUDO = "pseudo"
    AUGMENTED = "augmented"


@dataclasses.dataclass(frozen=True)
class Document:
    index: int
    external_id: str
    title: tuple[str, ...]
    body: tuple[str, ...]


@dataclasses.dataclass(frozen=True)
class Query:
    text: tuple[str, ...]
    gold_doc: int
    origin: Origin = Origin.SUPERVISED
    qid: str = ""


class Vocabulary:
    """Closed word vocabulary; reserved symbols sit at ids 0-3."""

    def __init__(self, tokens):
        words = sorted(set(tokens) - set(RESERVED))
        self.itos = list(RESERVED) + words
        self.stoi = {t: i for i, t in enumerate(self.itos)}

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def encode(self, tokens):
        return [self.stoi.get(t, UNK_ID) for t in tokens]

    def words(self):
        return self.itos[len(RESERVED):]


@dataclasses.dataclass
class Corpus:
    documents: list[Document]
    vocabulary: Vocabulary

    def __len__(self):
        return len(self.documents)

    def by_external_id(self):
        return {d.external_id: d.index for d in self.documents}


def tokenize(text):
    return tuple(text.split())


def truncate_document(doc, max_body_tokens=100):
    """Title tokens followed by at most ``max_body_tokens`` body tokens."""
    if max_body_tokens < 1:
        raise ValueError("max_body_tokens must be >= 1")
    return tuple(doc.title) + tuple(doc.body[:max_body_tokens])


def make_corpus(records):
    """Build a Corpus from (external_id, title tokens, body tokens) triples."""
    documents, seen = [], set()
    for external_id, title, body in records:
        if external_id in seen:
            raise CorpusError(f"duplicate external_id {external_id!r}")
        seen.add(external_id)
        if not title or not body:
            raise CorpusError(f"document {external_id!r} has an empty title or body")
        documents.append(Document(len(documents), external_id, tuple(title), tuple(body)))
    if not documents:
        raise CorpusError("empty corpus")
    vocab = Vocabulary(t for d in documents for t in d.title + d.body)
    return Corpus(documents, vocab)


def load_corpus(path):
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                records.append((str(rec["external_id"]), tokenize(rec["title"]), tokenize(rec["body"])))
            except (json.JSONDecodeError, KeyError, TypeError, AttributeError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed record ({exc})") from exc
    return make_corpus(records)


def save_corpus(corpus, path):
    with open(path, "w", encoding="utf-8") as fh:
        for d in corpus.documents:
            rec = {"external_id": d.external_id, "title": " ".join(d.title), "body": " ".join(d.body)}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def save_queries(queries, corpus, path):
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            rec = {"qid": q.qid, "text": " ".join(q.text),
                   "doc_id": corpus.documents[q.gold_doc].external_id, "origin": q.origin.value}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def load_queries(path, corpus):
    ids = corpus.by_external_id()
    queries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                gold = ids[rec["doc_id"]]
                queries.append(Query(tokenize(rec["text"]), gold, Origin(rec.get("origin", "supervised")),
                                     rec.get("qid") or f"q{lineno:06d}"))
            except KeyError as exc:
                raise CorpusError(f"{path}:{lineno}: unknown field or document {exc}") from exc
            except (json.JSONDecodeError, ValueError, TypeError) as exc:
                raise CorpusError(f"{path}:{lineno}: malformed record ({exc})") from exc
    return queries


# synthetic benchmark -------------------------------------------------------------

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh"]
_VOWELS = ["a", "e", "i", "o", "u"]
_CODAS = ["", "", "", "n", "r", "l", "s"]


@dataclasses.dataclass(frozen=True)
class SyntheticConfig:
    n_topics: int = 10
    topic_vocab: int = 40
    background_vocab: int = 60
    doc_keywords: int = 8
    entity_len: tuple[int, int] = (1, 2)
    body_len: tuple[int, int] = (80, 160)
    body_mix: tuple[float, float, float] = (0.30, 0.40, 0.30)  # doc-specific, topic, background
    query_len: tuple[int, int] = (5, 9)
    query_entity_prob: float = 0.6
    query_keywords: tuple[int, int] = (2, 3)


def _make_words(rng, n, taken):
    words = []
    while len(words) < n:
        n_syl = int(rng.integers(2, 4))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    for _ in range(n_syl))
        w += _CODAS[rng.integers(len(_CODAS))]
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def generate_synthetic_corpus(seed, n_docs, n_queries_per_doc, topic_params=None):
    """Seeded stand-in benchmark: (Corpus, supervised queries, entity lexicon).

    Each document mixes its own entity name and keywords, its topic's
    vocabulary, and shared background words. Supervised queries are short
    draws from the document's truncated text that favour doc-specific words.
    """
    if n_docs < 1:
        raise ValueError("n_docs must be >= 1")
    cfg = topic_params or SyntheticConfig()
    rng = np.random.default_rng(seed)
    taken: set[str] = set()
    background = _make_words(rng, cfg.background_vocab, taken)
    topics = [_make_words(rng, cfg.topic_vocab, taken) for _ in range(cfg.n_topics)]

    records, entities, specific = [], [], []
    for i in range(n_docs):
        topic = topics[i % cfg.n_topics]
        entity = _make_words(rng, int(rng.integers(cfg.entity_len[0], cfg.entity_len[1] + 1)), taken)
        keywords = _make_words(rng, cfg.doc_keywords, taken)
        title = entity + [topic[rng.integers(len(topic))]]
        length = int(rng.integers(cfg.body_len[0], cfg.body_len[1] + 1))
        source = rng.choice(3, size=length, p=cfg.body_mix)
        own = entity + keywords
        body = []
        for s in source:
            pool = (own, topic, background)[s]
            body.append(pool[rng.integers(len(pool))])
        # every doc-specific word must survive truncation to 100 body tokens
        slots = rng.choice(min(length, 100), size=len(own), replace=False)
        for word, slot in zip(own, slots):
            body[slot] = word
        records.append((f"doc{i:05d}", tuple(title), tuple(body)))
        entities.append(tuple(entity))
        specific.append(keywords)
    corpus = make_corpus(records)

    queries = []
    for doc, entity, keywords in zip(corpus.documents, entities, specific):
        truncated = truncate_document(doc)
        for j in range(n_queries_per_doc):
            length = int(rng.integers(cfg.query_len[0], cfg.query_len[1] + 1))
            n_kw = int(rng.integers(cfg.query_keywords[0], cfg.query_keywords[1] + 1))
            words = [keywords[k] for k in rng.choice(len(keywords), size=n_kw, replace=False)]
            with_entity = rng.random() < cfg.query_entity_prob
            target = length - (len(entity) if with_entity else 0)
            while len(words) < target:
                words.append(truncated[rng.integers(len(truncated))])
            words = [words[k] for k in rng.permutation(len(words))]
            if with_entity:
                at = int(rng.integers(len(words) + 1))
                words = words[:at] + list(entity) + words[at:]
            queries.append(Query(tuple(words), doc.index, Origin.SUPERVISED, f"{doc.external_id}-q{j}"))
    return corpus, queries, entities


def split(queries, test_fraction, seed):
    """Seeded train/test split that keeps >= 1 training query per document when possible."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must be in (0, 1)")
    n = len(queries)
    if n < 2:
        raise ValueError("need at least two queries to split")
    n_test = min(n - 1, max(1, int(round(n * test_fraction))))
    remaining: dict[int, int] = {}
    for q in queries:
        remaining[q.gold_doc] = remaining.get(q.gold_doc, 0) + 1
    order = np.random.default_rng(seed).permutation(n)
    test_idx, deferred = set(), []
    for i in order:
        if len(test_idx) == n_test:
            break
        doc = queries[i].gold_doc
        if remaining[doc] > 1:
            remaining[doc] -= 1
            test_idx.add(int(i))
        else:
            deferred.append(int(i))
    for i in deferred:
        if len(test_idx) == n_test:
            break
        test_idx.add(i)
    train = [q for i, q in enumerate(queries) if i not in test_idx]
    test = [q for i, q in enumerate(queries) if i in test_idx]
    return train, test


def save_lexicon(entities, path):
    Path(path).write_text("".join(" ".join(e) + "\n" for e in entities), encoding="utf-8")


def load_lexicon(path):
    seen, out = set(), []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        ent = tuple(line.split())
        if ent and ent not in seen:
            seen.add(ent)
            out.append(ent)
    return out
