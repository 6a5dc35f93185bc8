"""Flat key=value run configuration and named seed substreams."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import ConfigError

SUBSTREAMS = ("synth", "data", "init", "train", "kmeans", "bootstrap", "gender", "errors")


def derive_seed(root: int, name: str) -> int:
    """Integer seed for substream ``name`` of the run seed ``root``."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(name.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def substream(root: int, name: str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, name))


@dataclass
class RunConfig:
    # paths; empty means "derive from out"
    out: str = "runs"
    corpus: str = ""
    checkpoint: str = ""
    seed: int = 0
    # synthetic corpus
    n: int = 100
    ad_fraction: float = 0.67
    utterances_min: int = 8
    utterances_max: int = 16
    # data
    tagged: bool = False
    require_pos: bool = True
    vocab_size: int = 2396
    max_len: int = 0
    by_transcript: bool = False
    # model; zero means the architecture default
    arch: str = "cnn_lstm"
    embed_dim: int = 300
    filters_per_size: int = 0
    hidden: int = 0
    layers: int = 2
    keep_prob: float = 0.0
    # training
    epochs: int = 50
    patience: int = 5
    batch_size: int = 0
    lr: float = 1e-4
    clip_norm: float = 2.0
    # evaluation
    error_report: bool = False
    sample_frac: float = 0.1
    short_threshold: int = 3
    # clustering
    k: int = 10
    probe: str = ""
    task: str = "per-task"
    restarts: int = 5
    top_k: int = 4
    # saliency
    ids: str = ""
    n_saliency: int = 5
    format: str = "html"
    score_kind: str = "l2"
    target: str = "predicted"
    # gender
    mode: str = "train-per-subset"
    n_resamples: int = 10000

    @property
    def corpus_dir(self) -> Path:
        return Path(self.corpus) if self.corpus else Path(self.out) / "corpus"

    @property
    def checkpoint_dir(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else Path(self.out) / "train"

    def validate(self):
        if self.arch not in ("cnn", "lstm", "cnn_lstm"):
            raise ConfigError(f"arch must be cnn, lstm or cnn_lstm, got {self.arch!r}")
        if self.task not in ("per-task", "all", "Cookie", "Recall", "Other"):
            raise ConfigError(f"task must be per-task, all, Cookie, Recall or Other, got {self.task!r}")
        if self.format not in ("text", "html", "svg"):
            raise ConfigError(f"format must be text, html or svg, got {self.format!r}")
        if self.mode not in ("train-per-subset", "eval-shared"):
            raise ConfigError(f"mode must be train-per-subset or eval-shared, got {self.mode!r}")
        if self.score_kind not in ("l2", "abs_sum"):
            raise ConfigError(f"score_kind must be l2 or abs_sum, got {self.score_kind!r}")
        if self.k < 1 or self.restarts < 1:
            raise ConfigError("k and restarts must be positive")
        return self

    def update(self, pairs: dict):
        types = {f.name: f.type for f in fields(self)}
        for key, raw in pairs.items():
            key = key.replace("-", "_")
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(self, key, _coerce(key, types[key], raw))
        return self

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"


def _coerce(key, typ, raw):
    if not isinstance(raw, str):
        return raw
    try:
        if typ in (bool, "bool"):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ in (int, "int"):
            return int(raw)
        if typ in (float, "float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None
    return raw


def parse_config_text(text: str) -> dict:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno} is not key=value: {line!r}")
        k, v = line.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs
