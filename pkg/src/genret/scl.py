"""Supervised contrastive pretraining of the query encoder."""

from __future__ import annotations

import dataclasses
import logging
import math
import warnings

import numpy as np

from . import autograd as ag
from .model import Adam, ProjectionHead, TrainConfig, TrainingDiverged, pad_batch

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class SCLBatch:
    items: list  # (Query, label) pairs

    @property
    def labels(self):
        return [y for _, y in self.items]

    def __len__(self):
        return len(self.items)


@dataclasses.dataclass(frozen=True)
class SCLConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-3
    clip_norm: float = 1.0
    seed: int = 0
    temperature: float | None = None
    normalize: bool = False


class BatchSampler:
    """Draws batch_size/2 classes, then two queries per class.

    The second query of a pair is taken from a different origin than the
    first when the class has one (clean next to noisy/pseudo).
    """

    def __init__(self, queries, batch_size, seed):
        if batch_size < 2 or batch_size % 2:
            raise ValueError("batch_size must be an even number >= 2")
        by_class: dict[int, list] = {}
        for q in queries:
            by_class.setdefault(q.gold_doc, []).append(q)
        self.by_class = {c: qs for c, qs in sorted(by_class.items()) if len(qs) >= 2}
        if not self.by_class:
            raise ValueError("no class has two queries; cannot form positive pairs")
        self.classes = list(self.by_class)
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)

    def sample(self):
        n_classes = self.batch_size // 2
        replace = n_classes > len(self.classes)
        picked = self.rng.choice(len(self.classes), size=n_classes, replace=replace)
        items = []
        for ci in picked:
            label = self.classes[ci]
            qs = self.by_class[label]
            a = int(self.rng.integers(len(qs)))
            others = [i for i in range(len(qs)) if i != a]
            mixed = [i for i in others if qs[i].origin != qs[a].origin]
            pool = mixed or others
            b = pool[int(self.rng.integers(len(pool)))]
            items.append((qs[a], label))
            items.append((qs[b], label))
        return SCLBatch(items)


def sample_batch(queries, batch_size, seed):
    return BatchSampler(queries, batch_size, seed).sample()


def _positive_weights(labels):
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    counts = same.sum(axis=1)
    weights = np.where(counts[:, None] > 0, same / np.maximum(counts, 1)[:, None], 0.0)
    return weights, counts


def scl_loss(z, labels, temperature=None):
    """Supervised contrastive loss with raw inner products (optionally / temperature).

    Anchors without positives contribute nothing. Returns 0.0 (with a
    warning) when no anchor has a positive.
    """
    z = np.asarray(z, dtype=np.float64)
    if len(z) < 2:
        raise ValueError("need at least two embeddings")
    weights, counts = _positive_weights(labels)
    if not counts.any():
        warnings.warn("degenerate batch: no positive pairs")
        return 0.0
    sims = z @ z.T
    if temperature:
        sims = sims / temperature
    np.fill_diagonal(sims, -np.inf)
    mx = sims.max(axis=1, keepdims=True)
    log_denom = mx + np.log(np.exp(sims - mx).sum(axis=1, keepdims=True))
    logp = sims - log_denom
    np.fill_diagonal(logp, 0.0)
    return float(-(weights * logp).sum())


def scl_loss_tensor(z, labels, temperature=None):
    """Differentiable version of ``scl_loss`` on a (N, d_proj) Tensor."""
    weights, counts = _positive_weights(labels)
    sims = ag.matmul(z, ag.transpose(z, (1, 0)))
    if temperature:
        sims = ag.scale(sims, 1.0 / temperature)
    diag = np.diag(np.full(len(counts), -1e9))
    logp = ag.log_softmax(ag.add(sims, diag))
    return ag.neg(ag.total(ag.mul(logp, weights)))


def embed_queries(model, head, queries, vocab):
    """Projection-space vectors z for a list of queries (Tensor, differentiable)."""
    ids, mask = pad_batch([vocab.encode(q.text) for q in queries], model.config.pad_id)
    states = model.encode_batch(ids, mask)
    pooled = ag.masked_mean(states, mask)
    return head.forward(pooled)


def pooled_embeddings(model, queries, vocab):
    """Mean-pooled encoder vectors (no projection), as a numpy array."""
    ids, mask = pad_batch([vocab.encode(q.text) for q in queries], model.config.pad_id)
    with ag.no_grad():
        return ag.masked_mean(model.encode_batch(ids, mask), mask).data


def pretrain_encoder(model, head, queries, vocab, config=SCLConfig()):
    """Optimise encoder + projection head on the contrastive loss; returns per-step losses.

    Decoder parameters are neither read nor written.
    """
    sampler = BatchSampler(queries, config.batch_size, config.seed)
    params = [model.params[n] for n in model.encoder_names()] + list(head.params.values())
    opt = Adam(params, TrainConfig(lr=config.lr, clip_norm=config.clip_norm, seed=config.seed))
    curve = []
    for step in range(config.steps):
        batch = sampler.sample()
        z = embed_queries(model, head, [q for q, _ in batch.items], vocab)
        loss = scl_loss_tensor(z, batch.labels, config.temperature)
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingDiverged(f"contrastive loss became {value} at step {step}")
        loss.backward()
        opt.step()
        curve.append(value)
        if (step + 1) % 500 == 0:
            logger.info("scl step %d loss %.4f", step + 1, value)
    return curve


def new_projection_head(model, config=SCLConfig()):
    return ProjectionHead(model.config.d, model.config.d_proj, seed=config.seed,
                          normalize=config.normalize)
