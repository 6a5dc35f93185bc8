"""Optimisation, the training loop, evaluation and error analysis."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .autodiff import Tape, softmax, softmax_xent
from .corpus.encoding import CLASS_INDEX, CLASS_NAMES, EncodedSample, batch_arrays
from .errors import ConfigError, NumericError, PreconditionError, ShapeError
from .models import ModelHandle, forward

DEFAULT_BATCH_SIZE = {"cnn": 128, "lstm": 32, "cnn_lstm": 32}


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@dataclass
class TrainConfig:
    batch_size: int = 32
    clip_norm: float = 2.0
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    lr: float = 1e-4
    tagged: bool = False

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive")
        if self.max_epochs < 1 or self.patience < 0:
            raise ConfigError("max_epochs >= 1 and patience >= 0 required")

    @classmethod
    def for_arch(cls, arch, **kw):
        kw.setdefault("batch_size", DEFAULT_BATCH_SIZE[arch])
        return cls(**kw)


def clip_global_norm(grads: dict[str, np.ndarray], clip=2.0):
    """Scale all gradients jointly so their global L2 norm is at most ``clip``.

    Returns ``(clipped, original_norm)``; inputs are not modified.
    """
    if clip <= 0:
        raise ConfigError("clip must be positive")
    total = 0.0
    for name, g in grads.items():
        s = float(np.sum(g * g))
        if not math.isfinite(s):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        total += s
    norm = math.sqrt(total)
    if norm > clip:
        scale = clip / norm
        return {k: g * scale for k, g in grads.items()}, norm
    return dict(grads), norm


def adam_step(state: AdamState, params, grads: dict[str, np.ndarray]) -> AdamState:
    """Bias-corrected Adam update applied in place to ``params``."""
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ShapeError(f"gradient {name!r} has shape {g.shape}, parameter {params[name].shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params[name].data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_accuracy: float


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray  # rows = true class, cols = predicted (0 Control, 1 AD)
    predictions: list  # (sample, predicted class, P(AD))

    def to_text(self) -> str:
        c = self.confusion
        n = int(c.sum())
        return "\n".join([
            f"accuracy={self.accuracy:.4f} n={n}",
            "confusion (rows=true, cols=pred; Control, AD)",
            f"Control {int(c[0, 0])} {int(c[0, 1])}",
            f"AD {int(c[1, 0])} {int(c[1, 1])}",
        ]) + "\n"

    def predictions_csv(self) -> str:
        lines = ["transcript_id,index,true,pred,p_ad"]
        for s, pred, p_ad in self.predictions:
            lines.append(f"{s.source.transcript_id},{s.source.index},{s.label},"
                         f"{CLASS_NAMES[pred]},{p_ad:.6f}")
        return "\n".join(lines) + "\n"


def _batches(n, size):
    for start in range(0, n, size):
        yield slice(start, min(n, start + size))


def predict(m: ModelHandle, samples: Sequence[EncodedSample], batch_size=64):
    """Eval-mode class probabilities for every sample, shape (N, 2)."""
    out = []
    for sl in _batches(len(samples), batch_size):
        ids, lengths, _ = batch_arrays(samples[sl])
        out.append(softmax(forward(m, ids, lengths).data))
    return np.concatenate(out, axis=0)


def evaluate(m: ModelHandle, samples: Sequence[EncodedSample], batch_size=64) -> EvalReport:
    if not samples:
        raise PreconditionError("cannot evaluate on an empty sample set")
    probs = predict(m, samples, batch_size)
    # argmax breaks ties toward class 0 (Control)
    preds = np.argmax(probs, axis=1)
    truth = np.array([s.target for s in samples])
    confusion = np.zeros((2, 2), dtype=np.int64)
    np.add.at(confusion, (truth, preds), 1)
    acc = float(np.trace(confusion)) / len(samples)
    rows = [(s, int(p), float(pr[1])) for s, p, pr in zip(samples, preds, probs)]
    return EvalReport(acc, confusion, rows)


def majority_baseline(samples_or_labels) -> float:
    labels = [getattr(s, "label", s) for s in samples_or_labels]
    if not labels:
        raise PreconditionError("majority baseline of an empty set")
    counts = {}
    for lab in labels:
        counts[lab] = counts.get(lab, 0) + 1
    return max(counts.values()) / len(labels)


def train(m: ModelHandle, split, cfg: TrainConfig, log=None):
    """Minibatch Adam with global-norm clipping and best-dev checkpointing.

    Returns ``(m, history)``. ``m.params`` hold the weights of the epoch with
    the highest dev accuracy (earliest on ties). Training stops once
    ``patience`` consecutive epochs fail to improve dev accuracy.
    """
    cfg.validate()
    if not split.train:
        raise PreconditionError("training set is empty")
    dev = split.dev if split.dev else split.train
    ss = np.random.SeedSequence(cfg.seed)
    order_rng, dropout_rng = (np.random.default_rng(s) for s in ss.spawn(2))
    state = AdamState(lr=cfg.lr)
    history: list[EpochRecord] = []
    best_acc, best_params, since_best = -1.0, None, 0
    train_set = list(split.train)
    n = len(train_set)
    for epoch in range(1, cfg.max_epochs + 1):
        perm = order_rng.permutation(n)
        total_loss = 0.0
        for sl in _batches(n, cfg.batch_size):
            batch = [train_set[i] for i in perm[sl]]
            ids, lengths, targets = batch_arrays(batch)
            with Tape() as tape:
                logits = forward(m, ids, lengths, train=True, rng=dropout_rng)
                _, loss = softmax_xent(logits, targets)
            loss_val = float(loss.data)
            if not math.isfinite(loss_val):
                raise NumericError(f"loss became non-finite in epoch {epoch}")
            grads = m.params.gradients(tape, loss)
            grads, _ = clip_global_norm(grads, cfg.clip_norm)
            adam_step(state, m.params, grads)
            total_loss += loss_val * len(batch)
        dev_acc = evaluate(m, dev).accuracy
        rec = EpochRecord(epoch, total_loss / n, dev_acc)
        history.append(rec)
        if log is not None:
            log(rec)
        if dev_acc > best_acc:
            best_acc, best_params, since_best = dev_acc, m.params.snapshot(), 0
        else:
            since_best += 1
        if since_best >= cfg.patience:
            break
    m.params.restore(best_params)
    return m, history


def history_csv(history: Sequence[EpochRecord]) -> str:
    lines = ["epoch,train_loss,dev_accuracy"]
    lines += [f"{r.epoch},{r.train_loss!r},{r.dev_accuracy!r}" for r in history]
    return "\n".join(lines) + "\n"


@dataclass
class ErrorReport:
    n_misclassified: int
    sampled: list  # EncodedSample
    short_fraction: float
    short_threshold: int

    def to_text(self) -> str:
        lines = [f"misclassified_non_ad={self.n_misclassified} sampled={len(self.sampled)} "
                 f"short_fraction={self.short_fraction:.3f} short_threshold={self.short_threshold}"]
        for s in self.sampled:
            u = s.source
            lines.append(f"{u.transcript_id}:{u.index}\t{len(u.words)}\t{' '.join(u.words)}")
        return "\n".join(lines) + "\n"


def error_report(m: ModelHandle, samples: Sequence[EncodedSample], sample_frac=0.1,
                 short_threshold=3, seed=0, report: EvalReport | None = None) -> ErrorReport:
    """Sample the misclassified Control utterances and measure how many are short."""
    if not 0.0 < sample_frac <= 1.0:
        raise ConfigError("sample_frac must lie in (0, 1]")
    if report is None:
        report = evaluate(m, samples)
    control = CLASS_INDEX["Control"]
    wrong = [s for s, pred, _ in report.predictions if s.target == control and pred != control]
    if not wrong:
        return ErrorReport(0, [], 0.0, short_threshold)
    k = math.ceil(sample_frac * len(wrong) - 1e-9)
    rng = np.random.default_rng(seed)
    picked = sorted(rng.choice(len(wrong), size=k, replace=False))
    sampled = [wrong[i] for i in picked]
    short = sum(1 for s in sampled if len(s.source.words) <= short_threshold)
    return ErrorReport(len(wrong), sampled, short / len(sampled), short_threshold)
