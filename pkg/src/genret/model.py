"""From-scratch encoder-decoder that generates docid tokens for a query.

The encoder turns query token ids into contextual vectors; the decoder
emits docid digits (plus EOS) one step at a time with causal
self-attention and cross-attention over the encoder output. Everything is
float64 so that finite-difference gradient checks stay tight.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import zipfile

import numpy as np

from . import autograd as ag
from .autograd import Tensor

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
_NEG = -1e9


class CheckpointError(Exception):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_digits: int  # docid alphabet size k; EOS = k, BOS = k + 1
    d: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 2
    d_ff: int = 128
    d_proj: int = 32
    max_len: int = 128
    out_init_scale: float = 0.001
    pad_id: int = 1
    seed: int = 0

    def __post_init__(self):
        for field in ("vocab_size", "n_digits", "d", "heads", "d_ff", "d_proj", "max_len"):
            if getattr(self, field) <= 0:
                raise ValueError(f"{field} must be positive")
        if self.enc_layers < 1 or self.dec_layers < 1:
            raise ValueError("need at least one encoder and one decoder layer")
        if self.d % self.heads:
            raise ValueError("d must be divisible by heads")

    @property
    def eos_id(self):
        return self.n_digits

    @property
    def bos_id(self):
        return self.n_digits + 1

    @property
    def n_out(self):
        return self.n_digits + 1


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0
    max_steps: int | None = None

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size <= 0 or self.epochs <= 0 or self.clip_norm <= 0:
            raise ValueError("training hyperparameters must be positive")


def sinusoidal_positions(max_len, d):
    pos = np.arange(max_len)[:, None]
    i = np.arange(d // 2)[None, :]
    angle = pos / np.power(10000.0, 2 * i / d)
    pe = np.zeros((max_len, d))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : (d - d // 2)])
    return pe


def _uniform(rng, shape, fan_in, gain=1.0):
    bound = gain / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Seq2SeqModel:
    """Parameter store plus forward computation for the retriever."""

    def __init__(self, config: ModelConfig):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self._positions = sinusoidal_positions(config.max_len, config.d)
        self._init_params(np.random.default_rng(config.seed))

    # parameters ---------------------------------------------------------------

    def _add(self, name, value):
        self.params[name] = ag.parameter(value, name)

    def _init_attention(self, rng, prefix):
        d = self.config.d
        for proj in ("q", "k", "v", "o"):
            self._add(f"{prefix}.w{proj}", _uniform(rng, (d, d), d))
            self._add(f"{prefix}.b{proj}", np.zeros(d))

    def _init_norm(self, prefix):
        self._add(f"{prefix}.g", np.ones(self.config.d))
        self._add(f"{prefix}.b", np.zeros(self.config.d))

    def _init_ff(self, rng, prefix):
        d, f = self.config.d, self.config.d_ff
        self._add(f"{prefix}.w1", _uniform(rng, (d, f), d))
        self._add(f"{prefix}.b1", np.zeros(f))
        self._add(f"{prefix}.w2", _uniform(rng, (f, d), f))
        self._add(f"{prefix}.b2", np.zeros(d))

    def _init_params(self, rng):
        c = self.config
        self._add("src_embed", rng.uniform(-1.0, 1.0, size=(c.vocab_size, c.d)))
        for i in range(c.enc_layers):
            self._init_norm(f"enc.{i}.ln1")
            self._init_attention(rng, f"enc.{i}.self")
            self._init_norm(f"enc.{i}.ln2")
            self._init_ff(rng, f"enc.{i}.ff")
        self._init_norm("enc.final")
        self._add("tgt_embed", rng.uniform(-1.0, 1.0, size=(c.n_out + 1, c.d)))
        for i in range(c.dec_layers):
            self._init_norm(f"dec.{i}.ln1")
            self._init_attention(rng, f"dec.{i}.self")
            self._init_norm(f"dec.{i}.ln2")
            self._init_attention(rng, f"dec.{i}.cross")
            self._init_norm(f"dec.{i}.ln3")
            self._init_ff(rng, f"dec.{i}.ff")
        self._init_norm("dec.final")
        self._add("out.w", _uniform(rng, (c.d, c.n_out), c.d, gain=c.out_init_scale))
        self._add("out.b", np.zeros(c.n_out))

    def encoder_names(self):
        return [n for n in self.params if n == "src_embed" or n.startswith("enc.")]

    def decoder_names(self):
        return [n for n in self.params if n not in set(self.encoder_names())]

    def parameter_count(self):
        return int(sum(p.data.size for p in self.params.values()))

    def theta(self):
        """All parameters flattened into one vector (fixed name order)."""
        return np.concatenate([p.data.ravel() for p in self.params.values()])

    # building blocks ------------------------------------------------------------

    def _norm(self, x, prefix):
        p = self.params
        return ag.layer_norm(x, p[prefix + ".g"], p[prefix + ".b"])

    def _attention(self, xq, xkv, prefix, additive_mask):
        p, c = self.params, self.config
        B, Tq, d = xq.shape
        Tk = xkv.shape[1]
        h, dh = c.heads, d // c.heads
        q = ag.linear(xq, p[prefix + ".wq"], p[prefix + ".bq"])
        k = ag.linear(xkv, p[prefix + ".wk"], p[prefix + ".bk"])
        v = ag.linear(xkv, p[prefix + ".wv"], p[prefix + ".bv"])
        q = ag.transpose(ag.reshape(q, (B, Tq, h, dh)), (0, 2, 1, 3))
        kt = ag.transpose(ag.reshape(k, (B, Tk, h, dh)), (0, 2, 3, 1))
        v = ag.transpose(ag.reshape(v, (B, Tk, h, dh)), (0, 2, 1, 3))
        scores = ag.scale(ag.matmul(q, kt), 1.0 / math.sqrt(dh))
        attn = ag.softmax(scores, additive_mask)
        out = ag.matmul(attn, v)
        out = ag.reshape(ag.transpose(out, (0, 2, 1, 3)), (B, Tq, d))
        return ag.linear(out, p[prefix + ".wo"], p[prefix + ".bo"])

    def _ff(self, x, prefix):
        p = self.params
        hidden = ag.gelu(ag.linear(x, p[prefix + ".w1"], p[prefix + ".b1"]))
        return ag.linear(hidden, p[prefix + ".w2"], p[prefix + ".b2"])

    def _embed(self, table, ids):
        T = ids.shape[1]
        if T > self.config.max_len:
            raise ValueError(f"sequence length {T} exceeds max_len {self.config.max_len}")
        return ag.add(ag.embedding(self.params[table], ids), self._positions[:T])

    # forward --------------------------------------------------------------------

    def encode_batch(self, src_ids, src_mask):
        """(B, T) ids and 0/1 mask -> (B, T, d) encoder states."""
        src_ids = np.asarray(src_ids)
        src_mask = np.asarray(src_mask)
        key_mask = np.where(src_mask[:, None, None, :] > 0, 0.0, _NEG)
        x = self._embed("src_embed", src_ids)
        for i in range(self.config.enc_layers):
            pre = f"enc.{i}"
            y = self._norm(x, pre + ".ln1")
            x = ag.add(x, self._attention(y, y, pre + ".self", key_mask))
            x = ag.add(x, self._ff(self._norm(x, pre + ".ln2"), pre + ".ff"))
        out = self._norm(x, "enc.final")
        return out.check_finite("encoder output")

    def decode_batch(self, memory, src_mask, tgt_in):
        """Log-probabilities (B, T, n_out) for every decoder input position."""
        tgt_in = np.asarray(tgt_in)
        T = tgt_in.shape[1]
        causal = np.triu(np.full((T, T), _NEG), k=1)[None, None]
        key_mask = np.where(np.asarray(src_mask)[:, None, None, :] > 0, 0.0, _NEG)
        x = self._embed("tgt_embed", tgt_in)
        for i in range(self.config.dec_layers):
            pre = f"dec.{i}"
            y = self._norm(x, pre + ".ln1")
            x = ag.add(x, self._attention(y, y, pre + ".self", causal))
            y = self._norm(x, pre + ".ln2")
            x = ag.add(x, self._attention(y, memory, pre + ".cross", key_mask))
            x = ag.add(x, self._ff(self._norm(x, pre + ".ln3"), pre + ".ff"))
        x = self._norm(x, "dec.final")
        logits = ag.linear(x, self.params["out.w"], self.params["out.b"])
        return ag.log_softmax(logits).check_finite("decoder output")

    def sequence_nll(self, src_ids, src_mask, targets, target_mask):
        """Mean over the batch of -sum_m log p(y_m | y_<m, q) under teacher forcing."""
        targets = np.asarray(targets)
        B = targets.shape[0]
        tgt_in = np.concatenate(
            [np.full((B, 1), self.config.bos_id), targets[:, :-1]], axis=1)
        tgt_in = np.where(np.asarray(target_mask) > 0, tgt_in, self.config.bos_id)
        tgt_in[:, 0] = self.config.bos_id
        memory = self.encode_batch(src_ids, src_mask)
        logp = self.decode_batch(memory, src_mask, tgt_in)
        weights = np.asarray(target_mask, dtype=np.float64) / B
        return ag.neg(ag.pick(logp, np.where(target_mask, targets, 0), weights))

    # single-query helpers used by search ---------------------------------------

    def encode(self, token_ids):
        """One query -> (T, d) array of encoder vectors."""
        token_ids = np.asarray(token_ids, dtype=np.int64)
        if token_ids.size == 0:
            raise ValueError("cannot encode an empty query")
        with ag.no_grad():
            out = self.encode_batch(token_ids[None, :], np.ones((1, token_ids.size)))
        return out.data[0]

    def decode_next(self, memory, prefixes):
        """Next-token log-probs for equal-length digit prefixes sharing one query.

        memory: (T, d) from ``encode``; prefixes: (B, m) digit ids without BOS.
        Returns (B, n_out).
        """
        prefixes = np.asarray(prefixes, dtype=np.int64).reshape(len(prefixes), -1)
        B = prefixes.shape[0]
        tgt_in = np.concatenate([np.full((B, 1), self.config.bos_id), prefixes], axis=1)
        mem = Tensor(np.broadcast_to(memory, (B,) + memory.shape))
        with ag.no_grad():
            logp = self.decode_batch(mem, np.ones((B, memory.shape[0])), tgt_in)
        return logp.data[:, -1, :]


def decode_step(model, memory, prefix):
    """Log-probability vector over docid tokens after ``prefix``."""
    return model.decode_next(memory, [list(prefix)])[0]


def mean_pool(vectors, mask=None):
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim == 2:
        if len(vectors) == 0:
            raise ValueError("mean_pool needs at least one vector")
        return vectors.mean(axis=0)
    return ag.masked_mean(Tensor(vectors), mask).data


class ProjectionHead:
    """Affine -> tanh -> affine map from pooled encoder states to z."""

    def __init__(self, d, d_proj, seed=0, normalize=False):
        rng = np.random.default_rng(seed)
        self.d, self.d_proj = d, d_proj
        self.normalize = normalize
        self.params = {
            "proj.w1": ag.parameter(_uniform(rng, (d, d), d), "proj.w1"),
            "proj.b1": ag.parameter(np.zeros(d), "proj.b1"),
            "proj.w2": ag.parameter(_uniform(rng, (d, d_proj), d), "proj.w2"),
            "proj.b2": ag.parameter(np.zeros(d_proj), "proj.b2"),
        }

    def forward(self, pooled):
        p = self.params
        h = ag.tanh(ag.linear(pooled, p["proj.w1"], p["proj.b1"]))
        z = ag.linear(h, p["proj.w2"], p["proj.b2"])
        if self.normalize:
            z = _unit_rows(z)
        return z


def _unit_rows(z):
    norm = np.sqrt((z.data * z.data).sum(axis=-1, keepdims=True))

    def backward(g):
        y = z.data / norm
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm,)

    return ag._make(z.data / norm, (z,), backward)


def project(head, pooled):
    pooled = np.asarray(pooled, dtype=np.float64)
    if pooled.shape[-1] != head.d:
        raise ValueError(f"expected input dimension {head.d}, got {pooled.shape[-1]}")
    with ag.no_grad():
        return head.forward(Tensor(pooled)).data


# optimisation ---------------------------------------------------------------------

class Adam:
    """Adam with global-norm clipping; moments live in one flat buffer."""

    def __init__(self, params, cfg: TrainConfig):
        self.params = list(params)
        self.cfg = cfg
        self.t = 0
        sizes = [p.data.size for p in self.params]
        self.offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.m = np.zeros(self.offsets[-1])
        self.v = np.zeros(self.offsets[-1])
        self._g = np.zeros(self.offsets[-1])
        self._tmp = np.zeros(self.offsets[-1])

    def step(self):
        cfg = self.cfg
        g, tmp = self._g, self._tmp
        for p, a, b in zip(self.params, self.offsets[:-1], self.offsets[1:]):
            g[a:b] = 0.0 if p.grad is None else p.grad.ravel()
        norm = math.sqrt(float(g @ g))
        if not math.isfinite(norm):
            bad = np.flatnonzero(~np.isfinite(g))[0]
            p = self.params[int(np.searchsorted(self.offsets, bad, side="right")) - 1]
            raise ag.NonFiniteError(f"non-finite gradient in layer {p.name}")
        g *= min(1.0, cfg.clip_norm / (norm + 1e-12))
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        # in place: the moment buffers dominate the cost of a step
        self.m *= cfg.beta1
        np.multiply(g, 1.0 - cfg.beta1, out=tmp)
        self.m += tmp
        self.v *= cfg.beta2
        np.multiply(g, g, out=tmp)
        tmp *= 1.0 - cfg.beta2
        self.v += tmp
        np.multiply(self.v, 1.0 / bc2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += cfg.eps
        np.divide(self.m, tmp, out=tmp)
        tmp *= cfg.lr / bc1
        update = tmp
        for p, a, b in zip(self.params, self.offsets[:-1], self.offsets[1:]):
            p.data -= update[a:b].reshape(p.data.shape)
            p.grad = None
        return norm


def backward(loss, params):
    """Reverse-mode gradients of a scalar loss; returns {name: grad}."""
    for p in params.values():
        p.grad = None
    loss.backward()
    grads = {}
    for name, p in params.items():
        g = np.zeros_like(p.data) if p.grad is None else p.grad
        if not np.all(np.isfinite(g)):
            raise ag.NonFiniteError(f"non-finite gradient in layer {name}")
        grads[name] = g
    return grads


def pad_batch(seqs, pad_id):
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), pad_id, dtype=np.int64)
    mask = np.zeros((len(seqs), width), dtype=np.int64)
    for row, s in enumerate(seqs):
        ids[row, : len(s)] = s
        mask[row, : len(s)] = 1
    return ids, mask


def seq_loss(model, pairs):
    """Eq.-(2)-style loss: batch mean of -log p(docid | query); pairs hold id lists."""
    if not pairs:
        raise ValueError("empty batch")
    src, src_mask = pad_batch([q for q, _ in pairs], model.config.pad_id)
    tgt, tgt_mask = pad_batch([y for _, y in pairs], 0)
    with ag.no_grad():
        return float(model.sequence_nll(src, src_mask, tgt, tgt_mask).data)


def train_pairs(model, pairs, cfg: TrainConfig, log_every=0):
    """Mini-batch Adam on the teacher-forced loss; returns per-epoch mean loss."""
    if not pairs:
        raise ValueError("no training pairs")
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.params.values(), cfg)
    curve, step = [], 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [pairs[i] for i in order[start:start + cfg.batch_size]]
            src, src_mask = pad_batch([q for q, _ in batch], model.config.pad_id)
            tgt, tgt_mask = pad_batch([y for _, y in batch], 0)
            loss = model.sequence_nll(src, src_mask, tgt, tgt_mask)
            value = float(loss.data)
            if not math.isfinite(value):
                raise TrainingDiverged(f"loss became {value} at epoch {epoch}, step {step}")
            loss.backward()
            opt.step()
            total += value * len(batch)
            count += len(batch)
            step += 1
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
        curve.append(total / count)
        if log_every and (epoch + 1) % log_every == 0:
            logger.info("epoch %d loss %.4f", epoch + 1, curve[-1])
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
    return curve


# checkpoints ------------------------------------------------------------------------

def save_checkpoint(model, path, flags=(), extra=None):
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": dataclasses.asdict(model.config),
        "flags": sorted(flags),
        "extra": extra or {},
    }
    arrays = {name: p.data for name, p in model.params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8),
                 **arrays)


def load_checkpoint(path):
    """Returns (model, meta)."""
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(bytes(data["__meta__"]).decode())
            if meta.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError(
                    f"checkpoint version {meta.get('version')} != expected {CHECKPOINT_VERSION}")
            model = Seq2SeqModel(ModelConfig(**meta["config"]))
            for name, p in model.params.items():
                if name not in data.files:
                    raise CheckpointError(f"checkpoint missing parameter {name}")
                arr = data[name]
                if arr.shape != p.data.shape:
                    raise CheckpointError(f"shape mismatch for {name}: {arr.shape} vs {p.data.shape}")
                p.data = arr.astype(np.float64)
    except CheckpointError:
        raise
    except (OSError, ValueError, KeyError, zipfile.BadZipFile, json.JSONDecodeError, TypeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return model, meta


def make_pairs(queries, vocab, docid_map):
    """(query token ids, docid target ids) for every query with a non-empty text."""
    return [(vocab.encode(q.text), docid_map.targets(q.gold_doc)) for q in queries if q.text]


def train(model, queries, docid_map, vocab, cfg: TrainConfig, log_every=0):
    """Fine-tune on query -> docid pairs with the teacher-forced loss."""
    if not queries:
        raise ValueError("no training queries")
    for q in queries:
        if not 0 <= q.gold_doc < len(docid_map):
            raise ValueError(f"query {q.qid!r} points at unknown document {q.gold_doc}")
    return train_pairs(model, make_pairs(queries, vocab, docid_map), cfg, log_every)
