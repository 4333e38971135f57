"""
Supervised contrastive pretraining
==================================

Queries for the same document (supervised, pseudo and augmented) are
pulled together in projection space before the decoder is ever trained.
"""

import math

import numpy as np

from genret.augment import NoiseConfig, augment_queries, build_confusion_table
from genret.corpus import generate_synthetic_corpus, split
from genret.model import ModelConfig, Seq2SeqModel
from genret.qgen import build_training_set
from genret.scl import SCLConfig, new_projection_head, pooled_embeddings, pretrain_encoder, scl_loss

# the hand case: items 1 and 2 are positives of each other, item 3 has none
z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
print("loss", scl_loss(z, ["a", "a", "b"]), "expected", 2 * math.log(1 + math.exp(-1)))

###############################################################################
# Pretrain a small encoder on 30 documents and compare cosine similarities
# within and across documents.

corpus, queries, _ = generate_synthetic_corpus(seed=2, n_docs=30, n_queries_per_doc=5)
train, _ = split(queries, 0.2, seed=1)
q_seq = build_training_set(train, corpus, 3, seed=0)
q = q_seq + augment_queries(q_seq, build_confusion_table(corpus), NoiseConfig(seed=4))

model = Seq2SeqModel(ModelConfig(vocab_size=len(corpus.vocabulary), n_digits=4, d=32, d_ff=64,
                                 d_proj=16, seed=0))


def cosine_gap():
    e = pooled_embeddings(model, q, corpus.vocabulary)
    e = e / np.linalg.norm(e, axis=1, keepdims=True)
    cos = e @ e.T
    labels = np.array([x.gold_doc for x in q])
    same = (labels[:, None] == labels[None, :]) & ~np.eye(len(q), dtype=bool)
    return cos[same].mean(), cos[labels[:, None] != labels[None, :]].mean()


print("before: intra %.3f  inter %.3f" % cosine_gap())
cfg = SCLConfig(steps=300, seed=1)
curve = pretrain_encoder(model, new_projection_head(model, cfg), q, corpus.vocabulary, cfg)
print(f"loss {np.mean(curve[:20]):.3f} -> {np.mean(curve[-20:]):.3f}")
print("after:  intra %.3f  inter %.3f" % cosine_gap())
