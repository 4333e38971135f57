"""Command-line driver for the staged pipeline.

Every stage reads its inputs from ``--out-dir`` and writes its outputs
there, recording (config hash, seed) for each artifact in
``manifest.json``. A stage refuses to consume an artifact produced under a
different config or seed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment as ex
from .augment import NoiseConfig, augment_queries, build_confusion_table
from .config import ConfigError, load_config, save_config, sub_seed
from .corpus import (
    Origin, generate_synthetic_corpus, load_corpus, load_queries, save_corpus,
    save_lexicon, save_queries, split, tokenize,
)
from .docid import DocidMap, build_docids
from .model import CheckpointError, load_checkpoint, save_checkpoint, train
from .qgen import document_frequencies, generate_pseudo_queries
from .scl import new_projection_head, pretrain_encoder
from .trie import build_trie, constrained_beam_search

logger = logging.getLogger("genret")

MANIFEST = "manifest.json"
CONFIG_COPY = "config.yaml"  # effective config, written by gen-corpus


class StageError(RuntimeError):
    pass


class Workspace:
    def __init__(self, out_dir, config, seed):
        self.dir = Path(out_dir)
        self.config = config
        self.seed = seed
        self.hash = config.hash()

    def path(self, name):
        return self.dir / name

    def _manifest(self):
        p = self.path(MANIFEST)
        return json.loads(p.read_text(encoding="utf-8")) if p.exists() else {}

    def record(self, *names, stage):
        self.dir.mkdir(parents=True, exist_ok=True)
        manifest = self._manifest()
        for name in names:
            manifest[name] = {"config_hash": self.hash, "seed": self.seed, "stage": stage}
        self.path(MANIFEST).write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n",
                                       encoding="utf-8")

    def require(self, name):
        p = self.path(name)
        if not p.exists():
            raise StageError(f"missing input {p}; run the stage that produces it first")
        entry = self._manifest().get(name)
        if entry is None:
            raise StageError(f"{p} is not recorded in {self.path(MANIFEST)}")
        if entry["config_hash"] != self.hash:
            raise StageError(f"config hash mismatch for {name}: produced under {entry['config_hash']}, "
                             f"current config is {self.hash}")
        if entry["seed"] != self.seed:
            raise StageError(f"seed mismatch for {name}: produced with seed {entry['seed']}, "
                             f"current seed is {self.seed}")
        return p

    def corpus(self):
        return load_corpus(self.require("corpus.jsonl"))

    def queries(self, name, corpus):
        return load_queries(self.require(name), corpus)

    def docids(self):
        return DocidMap.load(self.require("docids.tsv"))


def cmd_gen_corpus(ws, args):
    c = ws.config.corpus
    corpus, queries, lexicon = generate_synthetic_corpus(
        sub_seed(ws.seed, "corpus"), c.n_docs, c.queries_per_doc)
    train_q, test_q = split(queries, c.test_fraction, sub_seed(ws.seed, "split"))
    ws.dir.mkdir(parents=True, exist_ok=True)
    save_config(ws.config, ws.path(CONFIG_COPY))
    save_corpus(corpus, ws.path("corpus.jsonl"))
    save_queries(train_q, corpus, ws.path("train.jsonl"))
    save_queries(test_q, corpus, ws.path("test.jsonl"))
    save_lexicon(lexicon, ws.path("lexicon.txt"))
    ws.record(CONFIG_COPY, "corpus.jsonl", "train.jsonl", "test.jsonl", "lexicon.txt", stage="gen-corpus")
    print(f"{len(corpus)} documents, {len(train_q)} train / {len(test_q)} test queries -> {ws.dir}")


def cmd_build_docids(ws, args):
    corpus = ws.corpus()
    d = ws.config.docid
    docid_map, tree = build_docids(corpus, d.k, d.leaf_cap, sub_seed(ws.seed, "docid"))
    docid_map.save(ws.path("docids.tsv"))
    ws.record("docids.tsv", stage="build-docids")
    print(f"{len(docid_map)} docids, k={d.k}, tree depth {tree.depth()} -> {ws.path('docids.tsv')}")


def cmd_qgen(ws, args):
    corpus = ws.corpus()
    df = document_frequencies(corpus)
    seed = sub_seed(ws.seed, "qgen")
    pseudo = [q for doc in corpus.documents
              for q in generate_pseudo_queries(doc, ws.config.qgen.n, seed, df, len(corpus))]
    save_queries(pseudo, corpus, ws.path("pseudo.jsonl"))
    ws.record("pseudo.jsonl", stage="qgen")
    print(f"{len(pseudo)} pseudo queries -> {ws.path('pseudo.jsonl')}")


def cmd_prepare_training(ws, args):
    corpus = ws.corpus()
    q_seq = ws.queries("train.jsonl", corpus) + ws.queries("pseudo.jsonl", corpus)
    save_queries(q_seq, corpus, ws.path("q_seq.jsonl"))
    q = list(q_seq)
    if not args.no_da:
        a = ws.config.augment
        noise = NoiseConfig(a.p_sub, a.p_del, a.p_ins, a.n_augments, sub_seed(ws.seed, "augment"))
        q += augment_queries(q_seq, build_confusion_table(corpus), noise)
    save_queries(q, corpus, ws.path("q.jsonl"))
    ws.record("q_seq.jsonl", "q.jsonl", stage="prepare-training")
    counts = {o.value: sum(x.origin is o for x in q) for o in Origin}
    print(f"|Q_seq| = {len(q_seq)}, |Q| = {len(q)} {counts}")


def _training_queries(ws, args, corpus):
    return ws.queries(args.train_file, corpus)


def _model_for(ws, corpus):
    return ex.new_model(ws.config, len(corpus.vocabulary), sub_seed(ws.seed, "model-init"))


def _save_model(ws, model, name, flags, stage):
    save_checkpoint(model, ws.path(name), flags, {"config_hash": ws.hash, "seed": ws.seed})
    ws.record(name, stage=stage)


def _load_model(ws, name):
    path = ws.require(name)
    model, meta = load_checkpoint(path)
    if meta["extra"].get("config_hash") != ws.hash:
        raise StageError(f"config hash mismatch in checkpoint {path}")
    return model, meta


def cmd_pretrain(ws, args):
    corpus = ws.corpus()
    queries = _training_queries(ws, args, corpus)
    model = _model_for(ws, corpus)
    cfg = ex.scl_config(ws.config, sub_seed(ws.seed, "scl"))
    curve = pretrain_encoder(model, new_projection_head(model, cfg), queries, corpus.vocabulary, cfg)
    _save_model(ws, model, "pretrained.npz", ["scl-pretrained"], "pretrain")
    print(f"contrastive loss {curve[0]:.4f} -> {curve[-1]:.4f} over {len(curve)} steps")


def cmd_train(ws, args):
    corpus = ws.corpus()
    queries = _training_queries(ws, args, corpus)
    if args.init:
        model, meta = _load_model(ws, args.init)
        flags = meta["flags"]
    else:
        model, flags = _model_for(ws, corpus), []
    curve = train(model, queries, ws.docids(), corpus.vocabulary,
                  ex.train_config(ws.config, sub_seed(ws.seed, "finetune")))
    _save_model(ws, model, args.output, flags, "train")
    print(f"seq2seq loss {curve[0]:.4f} -> {curve[-1]:.4f} over {len(curve)} epochs")


def cmd_search(ws, args):
    corpus = ws.corpus()
    model, _ = _load_model(ws, args.checkpoint)
    trie = build_trie(ws.docids())
    ids = [d.external_id for d in corpus.documents]
    beam = args.beam or ws.config.search.beam
    top_k = args.top_k or ws.config.search.top_k

    def run(tokens):
        return constrained_beam_search(model, corpus.vocabulary.encode(tokens), trie, beam, top_k)

    if args.query_file:
        queries = load_queries(args.query_file, corpus)
        lines = []
        for q in queries:
            for rank, (doc, score) in enumerate(run(q.text) if q.text else [], 1):
                lines.append(f"{q.qid}\t{rank}\t{ids[doc]}\t{score:.6e}\n")
        out = Path(args.run_file) if args.run_file else ws.path("run.tsv")
        out.write_text("".join(lines), encoding="utf-8")
        print(f"{len(queries)} queries -> {out}")
    elif args.repl:
        for line in sys.stdin:
            tokens = tokenize(line)
            if not tokens:
                continue
            for rank, (doc, score) in enumerate(run(tokens), 1):
                print(f"{rank}\t{ids[doc]}\t{score:.6e}")
            print(flush=True)
    elif args.query:
        tokens = tokenize(args.query)
        if not tokens:
            raise StageError("empty query")
        for rank, (doc, score) in enumerate(run(tokens), 1):
            print(f"{rank}\t{ids[doc]}\t{score:.6e}")
    else:
        raise StageError("search needs --query, --query-file or --repl")


def cmd_eval(ws, args):
    seeds = [ws.seed + r for r in range(args.replicates)]
    report = ex.run_experiment_matrix(ws.config, args.checkpoint_dir, args.reuse_checkpoints, seeds=seeds)
    ws.dir.mkdir(parents=True, exist_ok=True)
    report.save(ws.path("report.json"))
    ws.record("report.json", stage="eval")
    print(report.table(), end="")


def build_parser():
    p = argparse.ArgumentParser(prog="genret", description="noise-robust generative retrieval pipeline")
    p.add_argument("--config", help="YAML config file (defaults apply when omitted)")
    p.add_argument("--seed", type=int, required=True, help="master seed (mandatory)")
    p.add_argument("--out-dir", default="run", help="artifact directory")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-corpus", help="synthetic corpus, query split and entity lexicon")
    g.add_argument("--docs", type=int)
    g.add_argument("--queries-per-doc", type=int)
    g.set_defaults(func=cmd_gen_corpus)

    sub.add_parser("build-docids", help="semantic docids by hierarchical clustering").set_defaults(
        func=cmd_build_docids)
    sub.add_parser("qgen", help="extractive pseudo queries").set_defaults(func=cmd_qgen)

    pt = sub.add_parser("prepare-training", help="Q_seq and Q = Q_seq + augmentations")
    pt.add_argument("--no-da", action="store_true", help="skip augmentation (Q = Q_seq)")
    pt.set_defaults(func=cmd_prepare_training)

    pre = sub.add_parser("pretrain", help="contrastive encoder pretraining")
    pre.add_argument("--train-file", default="q.jsonl")
    pre.set_defaults(func=cmd_pretrain)

    tr = sub.add_parser("train", help="seq2seq fine-tuning on query -> docid")
    tr.add_argument("--train-file", default="q.jsonl")
    tr.add_argument("--init", help="checkpoint to start from (e.g. pretrained.npz)")
    tr.add_argument("--output", default="model.npz")
    tr.set_defaults(func=cmd_train)

    s = sub.add_parser("search", help="constrained beam search over the docid trie")
    s.add_argument("--checkpoint", default="model.npz")
    s.add_argument("--query")
    s.add_argument("--query-file")
    s.add_argument("--run-file")
    s.add_argument("--repl", action="store_true")
    s.add_argument("--beam", type=int)
    s.add_argument("--top-k", type=int)
    s.set_defaults(func=cmd_search)

    e = sub.add_parser("eval", help="full experiment matrix -> EvalReport")
    e.add_argument("--checkpoint-dir")
    e.add_argument("--reuse-checkpoints", action="store_true")
    e.add_argument("--replicates", type=int, default=1,
                   help="benchmark instances with master seeds seed, seed+1, ...")
    e.set_defaults(func=cmd_eval)
    return p


def _apply_overrides(config, args):
    o = {}
    if getattr(args, "docs", None):
        o.setdefault("corpus", {})["n_docs"] = args.docs
    if getattr(args, "queries_per_doc", None):
        o.setdefault("corpus", {})["queries_per_doc"] = args.queries_per_doc
    return config.override(**o) if o else config


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    config_path = args.config
    if config_path is None and args.command != "gen-corpus":
        saved = Path(args.out_dir) / CONFIG_COPY
        config_path = saved if saved.exists() else None
    try:
        config = _apply_overrides(load_config(config_path), args)
    except ConfigError as exc:
        parser.error(str(exc))
    if args.command == "eval" and args.reuse_checkpoints and not args.checkpoint_dir:
        parser.error("--reuse-checkpoints needs --checkpoint-dir")
    ws = Workspace(args.out_dir, config, args.seed)
    try:
        args.func(ws, args)
    except (StageError, CheckpointError, ex.MissingCheckpointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
