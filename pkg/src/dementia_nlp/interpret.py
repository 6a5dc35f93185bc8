"""Activation clustering, per-cluster POS patterns and gradient saliency maps."""

from __future__ import annotations

import html
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .autodiff import Tape, Tensor, backward, pick, sum_all
from .corpus.chat import Utterance
from .corpus.encoding import (
    CLASS_INDEX, CLASS_NAMES, Vocabulary, batch_arrays, encode_utterance, utterance_tokens,
)
from .errors import ConfigError, PreconditionError, UsageError
from .models import ModelHandle, embed, forward_embedded, probe_activations


def default_probe(arch: str) -> str:
    return "pooled" if arch == "cnn" else "h_final"


@dataclass
class ActivationMatrix:
    rows: np.ndarray
    meta: list  # Utterance per row
    probe: str = ""

    def __post_init__(self):
        if self.rows.ndim != 2 or self.rows.shape[0] != len(self.meta):
            raise ValueError("activation rows and metadata do not align")


def capture_activations(m: ModelHandle, utterances: Sequence[Utterance], vocab: Vocabulary,
                        tagged=False, probe: Optional[str] = None, max_len=None,
                        batch_size=64) -> ActivationMatrix:
    if not utterances:
        raise PreconditionError("no utterances to capture activations for")
    probe = probe or default_probe(m.arch)
    max_len = max_len or m.config.max_len
    samples = [encode_utterance(u, vocab, tagged, max_len) for u in utterances]
    chunks = []
    for start in range(0, len(samples), batch_size):
        ids, lengths, _ = batch_arrays(samples[start:start + batch_size])
        chunks.append(probe_activations(m, ids, lengths, probe))
    return ActivationMatrix(np.concatenate(chunks, axis=0), list(utterances), probe)


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------

@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignment: np.ndarray
    inertia: float
    iterations_run: int
    inertia_history: list = field(default_factory=list)
    seed: int = 0


def _sq_dists(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _plusplus(X, k, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with chosen centres
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers, dtype=np.float64)


def kmeans(data, k: int, seed=0, max_iter=100, tol=1e-6) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds.

    An empty cluster takes over the point farthest from its current centroid.
    ``inertia_history`` holds the objective after every assignment step.
    """
    X = np.asarray(data.rows if isinstance(data, ActivationMatrix) else data, dtype=np.float64)
    n = X.shape[0]
    if k < 1 or k > n:
        raise PreconditionError(f"k must lie in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    C = _plusplus(X, k, rng)
    history = []
    it = 0
    while True:
        d = _sq_dists(X, C)
        assign = np.argmin(d, axis=1)
        point_cost = d[np.arange(n), assign]
        history.append(float(point_cost.sum()))
        if it >= max_iter:
            break
        it += 1
        new_C = np.empty_like(C)
        counts = np.bincount(assign, minlength=k)
        for j in range(k):
            if counts[j]:
                new_C[j] = X[assign == j].mean(axis=0)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            cost = ((X - new_C[assign]) ** 2).sum(axis=1)
            cost[np.isin(assign, empty)] = -1.0
            for j in empty:
                far = int(np.argmax(cost))
                new_C[j] = X[far]
                cost[far] = -1.0
        shift = float(np.sqrt(((new_C - C) ** 2).sum(axis=1)).max())
        C = new_C
        if shift < tol:
            d = _sq_dists(X, C)
            assign = np.argmin(d, axis=1)
            history.append(float(d[np.arange(n), assign].sum()))
            break
    return KMeansResult(C, assign, history[-1], it, history, seed)


def kmeans_restarts(data, k, seeds=(0, 1, 2, 3, 4), **kw) -> KMeansResult:
    """Best of several seeded runs; ties go to the earliest seed."""
    best = None
    for s in seeds:
        r = kmeans(data, k, seed=s, **kw)
        if best is None or r.inertia < best.inertia:
            best = r
    return best


# ---------------------------------------------------------------------------
# POS patterns per cluster
# ---------------------------------------------------------------------------

@dataclass
class ClusterPattern:
    cluster_id: int
    top_tags: list  # [(tag, frequency)]
    support: int  # tagged utterances counted
    total_tags: int
    distribution: list  # every tag, sorted like top_tags
    label: str = ""
    share: float = 0.0
    members: int = 0
    skipped: int = 0  # member utterances without tags

    def to_text(self) -> str:
        head = (f"cluster {self.cluster_id} label={self.label} share={self.share:.2f} "
                f"support={self.support}")
        return "\n".join([head] + [f"{t},{f:.4f}" for t, f in self.top_tags])


def tag_distribution(utterances: Sequence[Utterance]):
    """(tag, frequency) pairs over all tags, descending, ties lexicographic."""
    counts = Counter(t for u in utterances if u.pos is not None for t in u.pos)
    total = sum(counts.values())
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return [(t, c / total) for t, c in ranked], total


def cluster_pos_patterns(result: KMeansResult, am: ActivationMatrix, top_k=4) -> list[ClusterPattern]:
    k = result.centroids.shape[0]
    out = []
    for j in range(k):
        members = [am.meta[i] for i in np.flatnonzero(result.assignment == j)]
        tagged = [u for u in members if u.pos is not None]
        dist, total = tag_distribution(tagged) if tagged else ([], 0)
        if members:
            votes = Counter(u.label for u in members)
            # majority label; ties go to AD to flag mixed clusters
            label = max(("AD", "Control"), key=lambda lab: votes.get(lab, 0))
            share = votes[label] / len(members)
        else:
            label, share = "", 0.0
        out.append(ClusterPattern(j, dist[:top_k], len(tagged), total, dist, label, share,
                                  len(members), len(members) - len(tagged)))
    return out


def format_cluster_report(patterns: Sequence[ClusterPattern]) -> str:
    return "\n\n".join(p.to_text() for p in patterns) + "\n"


# ---------------------------------------------------------------------------
# saliency
# ---------------------------------------------------------------------------

@dataclass
class SaliencyMap:
    utterance: Utterance
    tokens: list  # rendered token text
    kinds: list  # "word" or "pos" per token
    scores: np.ndarray
    predicted_class: str
    target_class: str
    score_kind: str = "l2"

    @property
    def filename_stem(self):
        return f"{self.utterance.transcript_id}_{self.utterance.index}"


def _reduce(grad_rows, score_kind):
    if score_kind == "l2":
        return np.sqrt((grad_rows ** 2).sum(axis=1))
    if score_kind == "abs_sum":
        return np.abs(grad_rows).sum(axis=1)
    raise ConfigError(f"unknown score kind {score_kind!r}; use 'l2' or 'abs_sum'")


def embedding_gradient(m: ModelHandle, ids, lengths, target):
    """Eval-mode logits and d logit[target] / d embedding rows, shape (B, L, D)."""
    emb_data, lengths = embed(m, ids, lengths)
    emb = Tensor(emb_data.data, requires_grad=True)
    with Tape() as tape:
        logits = forward_embedded(m, emb, lengths)
        obj = sum_all(pick(logits, np.broadcast_to(target, (emb.shape[0],))))
    (g,) = backward(tape, obj, [emb])
    return logits.data, g


def saliency(m: ModelHandle, utterance: Utterance, vocab: Vocabulary, tagged=False,
             score_kind="l2", target="predicted", max_len=None) -> SaliencyMap:
    """Per-token gradient magnitude of a pre-softmax class score.

    ``target`` is ``"predicted"``, ``"true"`` or a class name / index.
    """
    max_len = max_len or m.config.max_len
    s = encode_utterance(utterance, vocab, tagged, max_len)
    ids, lengths, _ = batch_arrays([s])
    emb_data, _ = embed(m, ids, lengths)
    logits = forward_embedded(m, emb_data, lengths).data[0]
    predicted = int(np.argmax(logits))
    if target == "predicted":
        tgt = predicted
    elif target == "true":
        tgt = CLASS_INDEX[utterance.label]
    elif isinstance(target, str):
        tgt = CLASS_INDEX[target]
    else:
        tgt = int(target)
    _, g = embedding_gradient(m, ids, lengths, tgt)
    n = s.true_length
    scores = _reduce(g[0, :n], score_kind)
    toks = utterance_tokens(utterance, tagged)[:n]
    kinds = ["pos" if t.startswith("<pos:") else "word" for t in toks]
    return SaliencyMap(utterance, toks, kinds, scores, CLASS_NAMES[predicted],
                       CLASS_NAMES[tgt], score_kind)


# ---------------------------------------------------------------------------
# heat maps
# ---------------------------------------------------------------------------

def normalized_scores(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        return s
    lo, hi = s.min(), s.max()
    if hi - lo <= 0:
        return np.full_like(s, 0.5)
    return (s - lo) / (hi - lo)


def intensity_buckets(scores, n_buckets=5) -> np.ndarray:
    z = normalized_scores(scores)
    return np.minimum((z * n_buckets).astype(int), n_buckets - 1)


def render_heatmap(smap: SaliencyMap, fmt="text") -> str:
    z = normalized_scores(smap.scores)
    buckets = intensity_buckets(smap.scores)
    caption = f"predicted={smap.predicted_class} target={smap.target_class} score_kind={smap.score_kind}"
    if fmt == "text":
        # bar of '#' marks per intensity bucket, padded with '.'
        cells = [f"{tok}[{'#' * b}{'.' * (4 - b)}]" for tok, b in zip(smap.tokens, buckets)]
        return f"{smap.filename_stem} {caption}\n" + " ".join(cells) + "\n"
    if fmt == "html":
        spans = []
        for tok, kind, a in zip(smap.tokens, smap.kinds, z):
            spans.append(f'<span class="{kind}" style="background-color: rgba(200, 30, 30, {a:.3f}); '
                         f'padding: 0 2px">{html.escape(tok)}</span>')
        return ("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
                f"<title>{html.escape(smap.filename_stem)}</title></head><body>\n"
                f"<figure><p>{' '.join(spans)}</p>\n"
                f"<figcaption>{html.escape(caption)}</figcaption></figure>\n</body></html>\n")
    if fmt == "svg":
        x = 10
        parts = []
        for tok, a in zip(smap.tokens, z):
            w = 9 * len(tok) + 10
            parts.append(f'<rect x="{x}" y="10" width="{w}" height="24" '
                         f'fill="rgb(200,30,30)" fill-opacity="{a:.3f}"/>')
            parts.append(f'<text x="{x + 5}" y="27" font-family="monospace" font-size="14">'
                         f'{html.escape(tok)}</text>')
            x += w + 4
        width = max(x + 10, 9 * len(caption) + 20)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="64">\n'
                + "\n".join(parts)
                + f'\n<text x="10" y="54" font-family="sans-serif" font-size="12">{html.escape(caption)}</text>\n</svg>\n')
    raise UsageError(f"unknown heat map format {fmt!r}; use text, html or svg")
