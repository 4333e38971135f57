"""ASR-like query corruption: phonetic confusion groups and a calibrated noise channel."""

from __future__ import annotations

import dataclasses
import json
import zlib
from pathlib import Path

import numpy as np

from .corpus import Origin, Query, save_queries
from .metrics import corpus_wer

_SOUNDEX = {}
for _letters, _code in (("bfpv", "1"), ("cgjkqsxz", "2"), ("dt", "3"), ("l", "4"), ("mn", "5"), ("r", "6")):
    for _ch in _letters:
        _SOUNDEX[_ch] = _code

# fraction of the error budget spent on substitutions, deletions, insertions
ERROR_MIX = (0.6, 0.2, 0.2)


class CalibrationError(RuntimeError):
    def __init__(self, message, best_wer):
        super().__init__(message)
        self.best_wer = best_wer


def phonetic_key(word, length=4):
    """Soundex-style key: first letter plus consonant-class digits, zero padded."""
    word = word.lower()
    if not word:
        return ""
    digits, prev = [], _SOUNDEX.get(word[0], "")
    for ch in word[1:]:
        code = _SOUNDEX.get(ch, "")
        if code and code != prev:
            digits.append(code)
        if ch not in "hw":
            prev = code
    return (word[0] + "".join(digits) + "000")[:length]


@dataclasses.dataclass
class ConfusionTable:
    groups: list[tuple[str, ...]]
    lookup: dict[str, int]
    vocabulary: tuple[str, ...]

    def group_of(self, token):
        g = self.lookup.get(token)
        return None if g is None else self.groups[g]

    def substitute(self, token, rng):
        """A confusable replacement (never the token itself)."""
        group = self.group_of(token)
        if group is not None:
            options = [t for t in group if t != token]
        else:
            options = self.vocabulary
        choice = options[rng.integers(len(options))]
        while choice == token:  # only possible for the uniform fallback
            choice = options[rng.integers(len(options))]
        return choice


def build_confusion_table(words, seed=0, key_length=4):
    """Group words sharing a phonetic key; singleton keys form no group.

    ``words`` may be a Corpus (its vocabulary is used) or any iterable of
    tokens. The grouping is deterministic; ``seed`` is accepted for
    interface symmetry and does not change the result.
    """
    if hasattr(words, "vocabulary"):
        words = words.vocabulary.words()
    vocab = tuple(sorted(set(words)))
    by_key: dict[str, list[str]] = {}
    for w in vocab:
        by_key.setdefault(phonetic_key(w, key_length), []).append(w)
    groups = [tuple(ws) for _, ws in sorted(by_key.items()) if len(ws) >= 2]
    lookup = {w: gi for gi, g in enumerate(groups) for w in g}
    return ConfusionTable(groups, lookup, vocab)


@dataclasses.dataclass(frozen=True)
class NoiseConfig:
    p_sub: float = 0.10
    p_del: float = 0.03
    p_ins: float = 0.03
    n_augments: int = 3
    seed: int = 0

    def __post_init__(self):
        for p in (self.p_sub, self.p_del, self.p_ins):
            if not 0.0 <= p <= 1.0:
                raise ValueError("noise probabilities must lie in [0, 1]")
        if self.p_sub + self.p_del > 1.0:
            raise ValueError("p_sub + p_del must not exceed 1")
        if self.n_augments < 1:
            raise ValueError("n_augments must be >= 1")


def corrupt(tokens, table, p_sub, p_del, p_ins, rng):
    """One noisy pass: per-token substitute/delete/keep, plus insertions between slots."""
    out = []
    for tok in tokens:
        if rng.random() < p_ins:
            out.append(table.vocabulary[rng.integers(len(table.vocabulary))])
        r = rng.random()
        if r < p_sub:
            out.append(table.substitute(tok, rng))
        elif r < p_sub + p_del:
            continue
        else:
            out.append(tok)
    if rng.random() < p_ins:
        out.append(table.vocabulary[rng.integers(len(table.vocabulary))])
    return tuple(out)


def _query_rng(seed, query, salt=0):
    text = " ".join(query.text).encode("utf-8")
    return np.random.default_rng([seed, salt, zlib.crc32(text), query.gold_doc])


def augment_query(query, table, config, rng=None):
    """``config.n_augments`` independent corruptions of ``query`` (origin=augmented)."""
    if not query.text:
        raise ValueError("cannot augment an empty query")
    rng = rng if rng is not None else _query_rng(config.seed, query)
    out = []
    for a in range(config.n_augments):
        text = ()
        for _ in range(11):
            text = corrupt(query.text, table, config.p_sub, config.p_del, config.p_ins, rng)
            if text:
                break
        if not text:
            text = query.text
        out.append(Query(text, query.gold_doc, Origin.AUGMENTED, f"{query.qid}-aug{a}"))
    return out


def augment_queries(queries, table, config):
    out = []
    for i, q in enumerate(queries):
        out.extend(augment_query(q, table, config, np.random.default_rng([config.seed, i])))
    return out


def _noisy_pass(queries, table, rate, seed):
    p_sub, p_del, p_ins = (min(1.0, f * rate) for f in ERROR_MIX)
    if p_sub + p_del > 1.0:
        p_del = 1.0 - p_sub
    out = []
    for i, q in enumerate(queries):
        rng = np.random.default_rng([seed, i])
        text = ()
        for _ in range(11):
            text = corrupt(q.text, table, p_sub, p_del, p_ins, rng)
            if text:
                break
        out.append(Query(text or q.text, q.gold_doc, Origin.AUGMENTED, q.qid))
    return out


def make_noisy_testset(test_queries, target_wer, table, seed, tol=0.02, max_iter=20):
    """Corrupt a test set until its measured corpus WER is within ``tol`` of the target.

    The per-token error rate is rescaled multiplicatively by
    target / achieved after every pass. Measured WER is a step function of
    the rate on a finite set, so the proposal is kept inside the bracket of
    rates already seen to undershoot and overshoot (bisecting when it
    would leave it); this prevents cycling between two plateaus.
    Returns (noisy queries, achieved WER).
    """
    if not 0.0 <= target_wer < 1.0:
        raise ValueError("target_wer must be in [0, 1)")
    if target_wer == 0.0:
        return [Query(q.text, q.gold_doc, Origin.AUGMENTED, q.qid) for q in test_queries], 0.0
    refs = [q.text for q in test_queries]
    rate, best = target_wer, None
    lo, hi = 0.0, None  # rates known to give WER below / above the target
    for _ in range(max_iter):
        noisy = _noisy_pass(test_queries, table, rate, seed)
        achieved = corpus_wer(refs, [q.text for q in noisy])
        if best is None or abs(achieved - target_wer) < abs(best[1] - target_wer):
            best = (noisy, achieved)
        if abs(achieved - target_wer) <= tol:
            return noisy, achieved
        if achieved < target_wer:
            lo = max(lo, rate)
        else:
            hi = rate if hi is None else min(hi, rate)
        proposal = rate * 2.0 if achieved == 0 else rate * target_wer / achieved
        if proposal <= lo or (hi is not None and proposal >= hi):
            proposal = (lo + hi) / 2 if hi is not None else lo * 2.0
        rate = proposal
    raise CalibrationError(
        f"could not reach WER {target_wer:.3f} +/- {tol}; best {best[1]:.4f}", best[1])


def save_noisy_testset(queries, corpus, path, meta):
    """Query file plus a ``.meta.json`` sidecar (target/achieved WER, seed, ...)."""
    save_queries(queries, corpus, path)
    sidecar = Path(str(path) + ".meta.json")
    sidecar.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return sidecar
