"""Vocabulary construction, fixed-length id encoding and train/dev/test splits."""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from ..errors import ConfigError, PreconditionError
from .chat import Utterance

PAD = "<pad>"
OOV = "<oov>"
PAD_ID = 0
OOV_ID = 1
DEFAULT_VOCAB_SIZE = 2396
MAX_LEN_UNTAGGED = 32
MAX_LEN_TAGGED = 64

# class indices used by every model: argmax ties resolve to Control
CLASS_INDEX = {"Control": 0, "AD": 1}
CLASS_NAMES = ("Control", "AD")


def pos_token(tag: str) -> str:
    return f"<pos:{tag}>"


def default_max_len(tagged: bool) -> int:
    return MAX_LEN_TAGGED if tagged else MAX_LEN_UNTAGGED


class Vocabulary:
    def __init__(self, tokens: Sequence[str], max_size=DEFAULT_VOCAB_SIZE):
        tokens = list(tokens)
        if tokens[:2] != [PAD, OOV]:
            tokens = [PAD, OOV] + [t for t in tokens if t not in (PAD, OOV)]
        if len(tokens) > max_size:
            raise ConfigError(f"{len(tokens)} tokens exceed max_size {max_size}")
        if len(set(tokens)) != len(tokens):
            raise ConfigError("duplicate vocabulary tokens")
        self.max_size = max_size
        self.id_to_token = tokens
        self.token_to_id = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.id_to_token == other.id_to_token

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, OOV_ID)

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.id_to_token).encode("utf-8")).hexdigest()[:16]

    def to_text(self) -> str:
        return "\n".join(self.id_to_token) + "\n"

    @classmethod
    def from_text(cls, text: str, max_size=DEFAULT_VOCAB_SIZE) -> "Vocabulary":
        return cls([line for line in text.splitlines() if line], max_size=max_size)


def utterance_tokens(u: Utterance, tagged: bool) -> list[str]:
    if not tagged:
        return list(u.words)
    if u.pos is None:
        raise PreconditionError(f"utterance {u.key} has no POS tags but tagged encoding was requested")
    out = []
    for tag, word in zip(u.pos, u.words):
        out.append(pos_token(tag))
        out.append(word)
    return out


def build_vocabulary(utterances: Sequence[Utterance], max_size=DEFAULT_VOCAB_SIZE,
                     tagged=False) -> Vocabulary:
    if max_size < 3:
        raise ConfigError("vocabulary max_size must be at least 3")
    if not utterances:
        raise PreconditionError("cannot build a vocabulary from no utterances")
    counts = Counter()
    for u in utterances:
        counts.update(u.words)
        if tagged and u.pos is not None:
            counts.update(pos_token(t) for t in u.pos)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocabulary([PAD, OOV] + [t for t, _ in ranked[:max_size - 2]], max_size=max_size)


@dataclass(frozen=True, eq=False)
class EncodedSample:
    ids: tuple[int, ...]
    true_length: int
    label: str
    source: Utterance

    @property
    def key(self):
        return self.source.key

    @property
    def target(self) -> int:
        return CLASS_INDEX[self.label]


def encode_utterance(u: Utterance, vocab: Vocabulary, tagged=False, max_len=None) -> EncodedSample:
    if max_len is None:
        max_len = default_max_len(tagged)
    if max_len < 1:
        raise ConfigError("max_len must be positive")
    toks = utterance_tokens(u, tagged)[:max_len]
    ids = [vocab.lookup(t) for t in toks]
    n = len(ids)
    return EncodedSample(tuple(ids + [PAD_ID] * (max_len - n)), n, u.label, u)


def encode_all(utterances: Iterable[Utterance], vocab: Vocabulary, tagged=False, max_len=None):
    return [encode_utterance(u, vocab, tagged, max_len) for u in utterances]


def decode(sample: EncodedSample, vocab: Vocabulary) -> list[str]:
    return [vocab.id_to_token[i] for i in sample.ids[:sample.true_length]]


def batch_arrays(samples: Sequence[EncodedSample]):
    """Stack samples into ``(ids[B, L], lengths[B], targets[B])`` arrays."""
    ids = np.array([s.ids for s in samples], dtype=np.int64)
    lengths = np.array([s.true_length for s in samples], dtype=np.int64)
    targets = np.array([s.target for s in samples], dtype=np.int64)
    return ids, lengths, targets


@dataclass
class CorpusSplit:
    train: list[EncodedSample]
    dev: list[EncodedSample]
    test: list[EncodedSample]
    seed: int


def _split_sizes(n, ratios):
    n_train = math.floor(n * ratios[0] + 1e-9)
    n_dev = math.floor(n * ratios[1] + 1e-9)
    return n_train, n_dev, n - n_train - n_dev


def split_corpus(samples: Sequence[EncodedSample], ratios=(0.8, 0.1, 0.1), seed=0,
                 by_transcript=False) -> CorpusSplit:
    """Seeded shuffle followed by a contiguous train/dev/test partition.

    With ``by_transcript`` whole transcripts are shuffled and assigned so that
    no speaker appears in two subsets; the train/dev cut points fall at the
    first transcript boundary reaching the utterance-level target counts.
    """
    if not samples:
        raise PreconditionError("cannot split an empty sample set")
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ConfigError(f"split ratios must be three nonnegative numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    n = len(samples)
    n_train, n_dev, _ = _split_sizes(n, ratios)
    if not by_transcript:
        order = [samples[i] for i in rng.permutation(n)]
        return CorpusSplit(order[:n_train], order[n_train:n_train + n_dev],
                           order[n_train + n_dev:], seed)

    groups: dict[str, list[EncodedSample]] = {}
    for s in samples:
        groups.setdefault(s.source.transcript_id, []).append(s)
    names = sorted(groups)
    order = [names[i] for i in rng.permutation(len(names))]
    train, dev, test = [], [], []
    for name in order:
        if len(train) < n_train:
            train.extend(groups[name])
        elif len(dev) < n_dev:
            dev.extend(groups[name])
        else:
            test.extend(groups[name])
    return CorpusSplit(train, dev, test, seed)
