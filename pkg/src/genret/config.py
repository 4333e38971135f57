"""Experiment configuration: per-stage sections, YAML files, master-seed derivation and hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import zlib
from pathlib import Path

import numpy as np
import yaml


class ConfigError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class CorpusSection:
    n_docs: int = 200
    queries_per_doc: int = 5
    test_fraction: float = 0.2


@dataclasses.dataclass(frozen=True)
class DocidSection:
    k: int = 4
    leaf_cap: int = 8


@dataclasses.dataclass(frozen=True)
class QgenSection:
    n: int = 3


@dataclasses.dataclass(frozen=True)
class AugmentSection:
    p_sub: float = 0.10
    p_del: float = 0.03
    p_ins: float = 0.03
    n_augments: int = 3


@dataclasses.dataclass(frozen=True)
class ModelSection:
    d: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 2
    d_ff: int = 128
    d_proj: int = 32


@dataclasses.dataclass(frozen=True)
class SCLSection:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-3
    temperature: float | None = None
    normalize: bool = False


@dataclasses.dataclass(frozen=True)
class TrainSection:
    lr: float = 1e-3
    batch_size: int = 32
    # every neural system gets the same optimiser-step budget
    steps: int = 5250


@dataclasses.dataclass(frozen=True)
class SearchSection:
    beam: int = 10
    top_k: int = 10


@dataclasses.dataclass(frozen=True)
class EvalSection:
    conditions: tuple[float, ...] = (0.10, 0.15, 0.23)
    systems: tuple[str, ...] = ("bm25", "dsi", "dsi_qg", "wo_da", "wo_scl", "full_model")
    seeds: tuple[int, ...] = (0,)


SECTIONS = {
    "corpus": CorpusSection, "docid": DocidSection, "qgen": QgenSection,
    "augment": AugmentSection, "model": ModelSection, "scl": SCLSection,
    "train": TrainSection, "search": SearchSection, "eval": EvalSection,
}


@dataclasses.dataclass(frozen=True)
class Config:
    corpus: CorpusSection = CorpusSection()
    docid: DocidSection = DocidSection()
    qgen: QgenSection = QgenSection()
    augment: AugmentSection = AugmentSection()
    model: ModelSection = ModelSection()
    scl: SCLSection = SCLSection()
    train: TrainSection = TrainSection()
    search: SearchSection = SearchSection()
    eval: EvalSection = EvalSection()

    def to_dict(self):
        return json.loads(json.dumps(dataclasses.asdict(self)))

    def hash(self):
        """Short digest of the canonical JSON form; stamped on every artifact."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def override(self, **sections):
        """``override(train={"steps": 10})`` -> new Config."""
        return from_dict(_merge(self.to_dict(), sections))


def _merge(base, extra):
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _section(cls, name, values):
    if not isinstance(values, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(values) - set(fields)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(sorted(unknown))}")
    clean = {}
    for key, value in values.items():
        default = fields[key].default
        if isinstance(default, tuple):
            value = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{name}.{key} must be true or false")
        elif isinstance(default, (int, float)) and value is not None:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{name}.{key} must be a number")
            if isinstance(default, int) and not isinstance(default, bool) and value != int(value):
                raise ConfigError(f"{name}.{key} must be an integer")
            value = type(default)(value)
        clean[key] = value
    return cls(**clean)


def from_dict(data):
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of sections")
    unknown = set(data) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    return Config(**{name: _section(SECTIONS[name], name, data[name]) for name in data})


def load_config(path=None):
    if path is None:
        return Config()
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return from_dict(data)


def save_config(config, path):
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=True), encoding="utf-8")


def sub_seed(master, name):
    """Named stage seed derived from the master seed (stable across runs and platforms)."""
    return int(np.random.SeedSequence([master, zlib.crc32(name.encode())]).generate_state(1)[0])

