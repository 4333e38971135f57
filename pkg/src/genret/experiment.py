"""End-to-end experiment matrix: benchmark preparation, system training, noisy evaluation, reports."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from pathlib import Path

import numpy as np

from .augment import NoiseConfig, augment_queries, build_confusion_table, make_noisy_testset
from .bm25 import bm25_search, build_index
from .config import Config, sub_seed
from .corpus import generate_synthetic_corpus, split
from .docid import build_docids
from .metrics import eer, format_percent, hits_at_k, split_entity_noise
from .model import (
    CheckpointError, ModelConfig, Seq2SeqModel, TrainConfig, load_checkpoint, save_checkpoint, train,
)
from .qgen import build_training_set
from .scl import SCLConfig, new_projection_head, pretrain_encoder
from .trie import build_trie, constrained_beam_search

logger = logging.getLogger(__name__)

REPORT_VERSION = 1

# system -> (training set, contrastive pretraining)
NEURAL_SYSTEMS = {
    "dsi": ("sup", False),
    "dsi_qg": ("seq", False),
    "wo_da": ("seq", True),
    "wo_scl": ("full", False),
    "full_model": ("full", True),
}
SYSTEM_LABELS = {
    "bm25": "BM25", "dsi": "DSI", "dsi_qg": "DSI-QG", "wo_da": "w/o Data Augm.",
    "wo_scl": "w/o SCL", "full_model": "Full model",
}


class MissingCheckpointError(FileNotFoundError):
    pass


def condition_name(target):
    return "clean" if target == 0 else f"wer{target:.2f}"


@dataclasses.dataclass
class Benchmark:
    """Everything shared by the systems of one seed."""

    seed: int
    corpus: object
    lexicon: list
    train_queries: list
    test_queries: list
    docid_map: object
    trie: object
    table: object
    q_seq: list
    q_da: list
    conditions: dict  # name -> (queries, achieved WER)

    def training_set(self, kind):
        if kind == "sup":
            return list(self.train_queries)
        if kind == "seq":
            return list(self.q_seq)
        return self.q_seq + self.q_da


def prepare_benchmark(config: Config, seed):
    c = config
    corpus, queries, lexicon = generate_synthetic_corpus(
        sub_seed(seed, "corpus"), c.corpus.n_docs, c.corpus.queries_per_doc)
    train_q, test_q = split(queries, c.corpus.test_fraction, sub_seed(seed, "split"))
    docid_map, _ = build_docids(corpus, c.docid.k, c.docid.leaf_cap, sub_seed(seed, "docid"))
    table = build_confusion_table(corpus)
    q_seq = build_training_set(train_q, corpus, c.qgen.n, sub_seed(seed, "qgen"))
    noise = NoiseConfig(c.augment.p_sub, c.augment.p_del, c.augment.p_ins, c.augment.n_augments,
                        sub_seed(seed, "augment"))
    q_da = augment_queries(q_seq, table, noise)
    conditions = {"clean": (test_q, 0.0)}
    for target in c.eval.conditions:
        conditions[condition_name(target)] = make_noisy_testset(
            test_q, target, table, sub_seed(seed, f"noise-{target:.4f}"))
    return Benchmark(seed, corpus, lexicon, train_q, test_q, docid_map, build_trie(docid_map),
                     table, q_seq, q_da, conditions)


def new_model(config: Config, vocab_size, seed):
    m = config.model
    return Seq2SeqModel(ModelConfig(
        vocab_size=vocab_size, n_digits=config.docid.k, d=m.d,
        enc_layers=m.enc_layers, dec_layers=m.dec_layers, heads=m.heads, d_ff=m.d_ff,
        d_proj=m.d_proj, seed=seed))


def scl_config(config: Config, seed):
    s = config.scl
    return SCLConfig(steps=s.steps, batch_size=s.batch_size, lr=s.lr, seed=seed,
                     temperature=s.temperature, normalize=s.normalize)


def train_config(config: Config, seed):
    t = config.train
    # the step budget is the binding limit; epochs only needs to be large enough
    return TrainConfig(lr=t.lr, batch_size=t.batch_size, epochs=10**6, seed=seed, max_steps=t.steps)


def train_system(name, config: Config, bench: Benchmark):
    """Train one neural system from scratch; returns the fitted model."""
    kind, use_scl = NEURAL_SYSTEMS[name]
    queries = bench.training_set(kind)
    seed = bench.seed
    # ablations share initialisation and batch order seeds; only the intended dimension differs
    model = new_model(config, len(bench.corpus.vocabulary), sub_seed(seed, "model-init"))
    if use_scl:
        cfg = scl_config(config, sub_seed(seed, "scl"))
        pretrain_encoder(model, new_projection_head(model, cfg), queries, bench.corpus.vocabulary, cfg)
    train(model, queries, bench.docid_map, bench.corpus.vocabulary,
          train_config(config, sub_seed(seed, "finetune")))
    return model


class Retriever:
    """Uniform ranked-search interface over BM25 and generative models."""

    def __init__(self, bench: Benchmark, model=None, beam=10, top_k=10):
        self.bench = bench
        self.model = model
        self.beam = beam
        self.top_k = top_k
        self.index = build_index(bench.corpus) if model is None else None

    def search(self, tokens):
        if self.model is None:
            return bm25_search(self.index, tokens, self.top_k)
        ids = self.bench.corpus.vocabulary.encode(tokens)
        return constrained_beam_search(self.model, ids, self.bench.trie, self.beam, self.top_k)

    def ranked(self, queries):
        return [[d for d, _ in self.search(q.text)] if q.text else [] for q in queries]


def _hits(ranked, gold, subset):
    r = [ranked[i] for i in subset]
    g = [gold[i] for i in subset]
    return {"n": len(subset), "hits@1": hits_at_k(r, g, 1), "hits@10": hits_at_k(r, g, 10)}


def evaluate(retriever: Retriever, bench: Benchmark):
    """Per-condition Hits@1/10 on the full test set and the entity / non-entity subsets."""
    out = {}
    clean = [q.text for q in bench.test_queries]
    for name, (queries, _) in bench.conditions.items():
        ranked = retriever.ranked(queries)
        gold = [q.gold_doc for q in queries]
        ent, other = split_entity_noise(clean, [q.text for q in queries], bench.lexicon)
        row = _hits(ranked, gold, range(len(queries)))
        row["entity"] = _hits(ranked, gold, ent)
        row["non_entity"] = _hits(ranked, gold, other)
        out[name] = row
    return out


def condition_stats(bench: Benchmark):
    clean = [q.text for q in bench.test_queries]
    stats = {}
    for name, (queries, achieved) in bench.conditions.items():
        noisy = [q.text for q in queries]
        stats[name] = {"wer": achieved, "eer": eer(clean, noisy, bench.lexicon) if achieved else 0.0,
                       "n": len(queries)}
    return stats


def _checkpoint_path(directory, seed, system):
    return Path(directory) / f"seed{seed}-{system}.npz"


def run_seed(config: Config, seed, checkpoint_dir=None, reuse_checkpoints=False, timings=None):
    start = time.perf_counter()
    bench = prepare_benchmark(config, seed)
    if timings is not None:
        timings[(seed, "prepare")] = time.perf_counter() - start
    results = {}
    for system in config.eval.systems:
        start = time.perf_counter()
        if system == "bm25":
            retriever = Retriever(bench, top_k=config.search.top_k)
        else:
            model = None
            path = _checkpoint_path(checkpoint_dir, seed, system) if checkpoint_dir else None
            if reuse_checkpoints:
                if not path.exists():
                    raise MissingCheckpointError(f"missing checkpoint for {system} (seed {seed}): {path}")
                model, meta = load_checkpoint(path)
                if meta["extra"].get("config_hash") != config.hash():
                    raise CheckpointError(f"{path} was trained under a different config")
            else:
                model = train_system(system, config, bench)
                if path is not None:
                    path.parent.mkdir(parents=True, exist_ok=True)
                    flags = ["scl-pretrained"] if NEURAL_SYSTEMS[system][1] else []
                    save_checkpoint(model, path, flags, {"config_hash": config.hash(), "system": system,
                                                         "seed": seed})
            retriever = Retriever(bench, model, config.search.beam, config.search.top_k)
        results[system] = evaluate(retriever, bench)
        if timings is not None:
            timings[(seed, system)] = time.perf_counter() - start
        logger.info("seed %d %s done", seed, system)
    return {"conditions": condition_stats(bench), "systems": results}


def _mean_tree(trees):
    if isinstance(trees[0], dict):
        return {k: _mean_tree([t[k] for t in trees]) for k in trees[0]}
    return float(np.mean(trees))


def check_checkpoints(config: Config, checkpoint_dir, seeds=None):
    """List every (seed, system) checkpoint the matrix needs but cannot find."""
    gaps = []
    for seed in seeds if seeds is not None else config.eval.seeds:
        for system in config.eval.systems:
            if system != "bm25" and not _checkpoint_path(checkpoint_dir, seed, system).exists():
                gaps.append(f"seed{seed}-{system}")
    return gaps


def run_experiment_matrix(config: Config, checkpoint_dir=None, reuse_checkpoints=False, timings=None,
                          seeds=None):
    """Train and evaluate every configured system for every seed; returns an EvalReport.

    ``seeds`` (master seeds, one benchmark instance each) defaults to ``config.eval.seeds``.
    """
    seeds = list(config.eval.seeds if seeds is None else seeds)
    unknown = set(config.eval.systems) - set(SYSTEM_LABELS)
    if unknown:
        raise ValueError(f"unknown system(s): {', '.join(sorted(unknown))}")
    if reuse_checkpoints:
        gaps = check_checkpoints(config, checkpoint_dir, seeds)
        if gaps:
            raise MissingCheckpointError("missing checkpoints: " + ", ".join(gaps))
    per_seed = {str(s): run_seed(config, s, checkpoint_dir, reuse_checkpoints, timings)
                for s in seeds}
    runs = list(per_seed.values())
    return EvalReport({
        "version": REPORT_VERSION,
        "config_hash": config.hash(),
        "config": config.to_dict(),
        "seeds": seeds,
        "per_seed": per_seed,
        "mean": {"conditions": _mean_tree([r["conditions"] for r in runs]),
                 "systems": _mean_tree([r["systems"] for r in runs])},
    })


class EvalReport:
    """Condition x system x metric results with seeds and the config hash."""

    def __init__(self, data):
        self.data = data

    def __eq__(self, other):
        return isinstance(other, EvalReport) and self.data == other.data

    @property
    def config_hash(self):
        return self.data["config_hash"]

    def hits(self, system, condition, k=1, seed=None, subset=None):
        block = self.data["mean"] if seed is None else self.data["per_seed"][str(seed)]
        row = block["systems"][system][condition]
        if subset:
            row = row[subset]
        return row[f"hits@{k}"]

    def to_json(self):
        return json.dumps(self.data, sort_keys=True, indent=2) + "\n"

    def save(self, path, table=True):
        """JSON report at ``path``; the formatted table goes beside it as ``<path>.txt``."""
        Path(path).write_text(self.to_json(), encoding="utf-8")
        if table:
            Path(str(path) + ".txt").write_text(self.table(), encoding="utf-8")

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        if data.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {data.get('version')}")
        return cls(data)

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def table(self):
        """Two-decimal Hits@1 / Hits@10 table (mean over seeds) with per-condition WER and EER."""
        mean = self.data["mean"]
        conds = list(mean["conditions"])
        lines = [f"config {self.config_hash}  seeds {self.data['seeds']}"]
        header = ["condition", "WER", "EER (utterance-level)"]
        lines.append("  ".join(header))
        for c in conds:
            st = mean["conditions"][c]
            lines.append(f"{c}  {format_percent(100 * st['wer'])}  {format_percent(100 * st['eer'])}")
        lines.append("")
        lines.append("system".ljust(16) + "".join(f"{c + ' H@1/H@10':>24}" for c in conds))
        for system, rows in mean["systems"].items():
            cells = "".join(f"{format_percent(rows[c]['hits@1']) + ' / ' + format_percent(rows[c]['hits@10']):>24}"
                            for c in conds)
            lines.append(SYSTEM_LABELS[system].ljust(16) + cells)
        return "\n".join(lines) + "\n"
