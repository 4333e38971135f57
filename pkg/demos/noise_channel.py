"""
Simulated ASR noise
===================

Confusion groups collect words with the same soundex-style key. The noise
channel substitutes inside a group, deletes, or inserts, and a closed loop
tunes the per-token rates until a test set reaches a target word error
rate. The entity error rate counts utterances whose entity span was hit.
"""

from genret.augment import (
    NoiseConfig, augment_query, build_confusion_table, make_noisy_testset, phonetic_key,
)
from genret.corpus import generate_synthetic_corpus, split
from genret.metrics import align, eer, split_entity_noise

corpus, queries, lexicon = generate_synthetic_corpus(seed=0, n_docs=200, n_queries_per_doc=5)
train, test = split(queries, 0.2, seed=1)
table = build_confusion_table(corpus)

grouped = sum(w in table.lookup for w in corpus.vocabulary.words())
print(f"{len(table.groups)} confusion groups cover {grouped} of {len(corpus.vocabulary.words())} words")
word = table.groups[0][0]
print(word, phonetic_key(word), "->", table.groups[0])

###############################################################################
# Training-time augmentation: three corrupted copies per query.

q = train[0]
print("source   :", " ".join(q.text))
for aug in augment_query(q, table, NoiseConfig(seed=3)):
    print("augmented:", " ".join(aug.text))

###############################################################################
# Calibrated test conditions.

clean = [t.text for t in test]
for target in (0.10, 0.15, 0.23):
    noisy, achieved = make_noisy_testset(test, target, table, seed=5)
    hyp = [t.text for t in noisy]
    ent, other = split_entity_noise(clean, hyp, lexicon)
    print(f"target WER {target:.2f}: achieved {achieved:.4f}, "
          f"EER (utterance-level) {eer(clean, hyp, lexicon):.4f}, "
          f"entity-noise subset {len(ent)}, non-entity subset {len(other)}")

noisy, _ = make_noisy_testset(test, 0.23, table, seed=5)
for op, r, h in align(test[0].text, noisy[0].text):
    ref = test[0].text[r] if op != "ins" else "-"
    out = noisy[0].text[h] if op != "del" else "-"
    print(f"{op:5s} {ref:12s} {out}")
