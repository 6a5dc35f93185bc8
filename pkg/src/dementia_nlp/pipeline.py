"""End-to-end steps shared by the command line and the demo scripts."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import RunConfig, derive_seed, substream
from .corpus import (
    CorpusSplit, Transcript, Vocabulary, build_vocabulary, default_max_len, encode_all,
    extract_utterances, split_corpus,
)
from .errors import PreconditionError
from .interpret import (
    capture_activations, cluster_pos_patterns, format_cluster_report, kmeans_restarts,
    tag_distribution,
)
from .models import ModelHandle, default_config, init_model
from .stats import bootstrap_diff_test, format_gender_report, gender_partition_downsample
from .training import TrainConfig, evaluate, train

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    utterances: list
    vocab: Vocabulary
    samples: list
    split: CorpusSplit
    tagged: bool
    max_len: int


def max_len_for(cfg: RunConfig) -> int:
    return cfg.max_len or default_max_len(cfg.tagged)


def prepare_dataset(corpus: Sequence[Transcript], cfg: RunConfig, vocab: Vocabulary | None = None) -> Dataset:
    utts = extract_utterances(corpus, require_pos=cfg.require_pos)
    if not utts:
        raise PreconditionError("no utterances left after filtering")
    if vocab is None:
        vocab = build_vocabulary(utts, cfg.vocab_size, cfg.tagged)
    max_len = max_len_for(cfg)
    samples = encode_all(utts, vocab, cfg.tagged, max_len)
    split = split_corpus(samples, seed=derive_seed(cfg.seed, "data"), by_transcript=cfg.by_transcript)
    return Dataset(utts, vocab, samples, split, cfg.tagged, max_len)


def model_overrides(cfg: RunConfig) -> dict:
    kw = {"embed_dim": cfg.embed_dim}
    if cfg.arch in ("cnn", "cnn_lstm") and cfg.filters_per_size:
        kw["filters_per_size"] = cfg.filters_per_size
    if cfg.arch == "lstm":
        kw["layers"] = cfg.layers
        if cfg.hidden:
            kw["hidden"] = cfg.hidden
    if cfg.arch == "cnn_lstm" and cfg.hidden:
        kw["lstm_hidden"] = cfg.hidden
    if cfg.keep_prob:
        kw["keep_prob"] = cfg.keep_prob
    return kw


def new_model(cfg: RunConfig, vocab: Vocabulary, max_len: int) -> ModelHandle:
    mcfg = default_config(cfg.arch, len(vocab), max_len, **model_overrides(cfg))
    m = init_model(cfg.arch, mcfg, substream(cfg.seed, "init"))
    m.vocab_hash = vocab.digest()
    return m


def train_config(cfg: RunConfig) -> TrainConfig:
    kw = dict(clip_norm=cfg.clip_norm, max_epochs=cfg.epochs, patience=cfg.patience,
              seed=derive_seed(cfg.seed, "train"), lr=cfg.lr, tagged=cfg.tagged)
    if cfg.batch_size:
        kw["batch_size"] = cfg.batch_size
    return TrainConfig.for_arch(cfg.arch, **kw)


def fit(cfg: RunConfig, data: Dataset):
    m = new_model(cfg, data.vocab, data.max_len)
    return train(m, data.split, train_config(cfg),
                 log=lambda r: log.info("epoch %d loss %.4f dev %.4f", r.epoch, r.train_loss, r.dev_accuracy))


def select_task(utterances, task):
    if task in ("all", "per-task"):
        return list(utterances)
    return [u for u in utterances if u.task == task]


def cluster_report(m: ModelHandle, utterances, vocab, cfg: RunConfig, max_len: int) -> str:
    """Cluster activations (per task by default) and render the POS patterns."""
    if cfg.task == "per-task":
        groups = [(t, [u for u in utterances if u.task == t])
                  for t in sorted({u.task for u in utterances})]
    else:
        groups = [(cfg.task, select_task(utterances, cfg.task))]
    blocks = []
    seeds = [derive_seed(cfg.seed, f"kmeans{i}") for i in range(cfg.restarts)]
    for task, utts in groups:
        if not utts:
            continue
        am = capture_activations(m, utts, vocab, cfg.tagged, cfg.probe or None, max_len)
        k = min(cfg.k, len(utts))
        res = kmeans_restarts(am, k, seeds=seeds)
        patterns = cluster_pos_patterns(res, am, cfg.top_k)
        blocks.append(f"task {task} probe={am.probe} k={k} n={len(utts)} inertia={res.inertia:.6f}\n\n"
                      + format_cluster_report(patterns))
    return "\n".join(blocks)


def top_tags_by_gender(utterances, n=10, label="AD"):
    out = {}
    for g in ("male", "female"):
        dist, _ = tag_distribution([u for u in utterances if u.label == label and u.gender == g])
        out[g] = [t for t, _ in dist[:n]]
    return out


def gender_protocol(corpus: Sequence[Transcript], cfg: RunConfig) -> str:
    """Male vs downsampled-female accuracy with a bootstrap significance test."""
    data = prepare_dataset(corpus, cfg)
    gseed = derive_seed(cfg.seed, "gender")
    if cfg.mode == "train-per-subset":
        subsets = gender_partition_downsample(data.samples, seed=gseed)
        outcomes = []
        for name, subset in (("male", subsets.male), ("female", subsets.female_downsampled)):
            split = split_corpus(subset, seed=derive_seed(cfg.seed, "data"), by_transcript=cfg.by_transcript)
            sub = Dataset(data.utterances, data.vocab, subset, split, data.tagged, data.max_len)
            m, _ = fit(cfg, sub)
            rep = evaluate(m, split.test)
            outcomes.append([int(p == s.target) for s, p, _ in rep.predictions])
            log.info("%s subset: n=%d test accuracy %.4f", name, len(subset), rep.accuracy)
    else:
        m, _ = fit(cfg, data)
        subsets = gender_partition_downsample(data.split.test, seed=gseed)
        outcomes = []
        for subset in (subsets.male, subsets.female_downsampled):
            rep = evaluate(m, subset)
            outcomes.append([int(p == s.target) for s, p, _ in rep.predictions])
    res = bootstrap_diff_test(outcomes[0], outcomes[1], cfg.n_resamples, derive_seed(cfg.seed, "bootstrap"))
    text = format_gender_report(float(np.mean(outcomes[0])), float(np.mean(outcomes[1])), res, cfg.mode)
    mc, fc = subsets.male_counts, subsets.female_counts
    text += (f"male_n={len(subsets.male)} male_ad={mc['AD']} male_control={mc['Control']} "
             f"female_n={len(subsets.female_downsampled)} female_ad={fc['AD']} female_control={fc['Control']}\n")
    tops = top_tags_by_gender(data.utterances)
    text += (f"top10_ad_male={','.join(tops['male'])}\n"
             f"top10_ad_female={','.join(tops['female'])}\n"
             f"top10_same_set={set(tops['male']) == set(tops['female'])}\n")
    return text


def corpus_statistics(corpus: Sequence[Transcript]) -> str:
    utts = extract_utterances(corpus)
    tagged = sum(1 for u in utts if u.pos is not None)
    tc = Counter(t.diagnosis for t in corpus)
    lines = [
        f"transcripts={len(corpus)} AD={tc.get('AD', 0)} Control={tc.get('Control', 0)}",
        f"utterances={len(utts)} with_pos={tagged} pos_coverage={tagged / max(1, len(utts)):.4f}",
    ]
    for field_name in ("label", "gender", "task"):
        c = Counter(getattr(u, field_name) for u in utts)
        lines.append(f"utterances_by_{field_name}=" + ",".join(f"{k}:{c[k]}" for k in sorted(c)))
    return "\n".join(lines) + "\n"
