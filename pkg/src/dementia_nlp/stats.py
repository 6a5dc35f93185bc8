"""Gender-matched subsets and the bootstrap test for accuracy differences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, InsufficientDataError, PreconditionError

_CLASSES = ("AD", "Control")


def _gender(sample):
    src = getattr(sample, "source", sample)
    return src.gender


@dataclass
class GenderSubsets:
    male: list
    female_downsampled: list
    seed: int
    male_counts: dict
    female_counts: dict

    @property
    def sizes(self):
        return len(self.male), len(self.female_downsampled)


def _counts(samples):
    return {c: sum(1 for s in samples if s.label == c) for c in _CLASSES}


def gender_partition_downsample(samples: Sequence, seed=0) -> GenderSubsets:
    """Keep every male sample; draw female samples per class to match.

    The female subset gets exactly as many AD and Control samples as the male
    subset, so both size and class ratio agree. Draws are without replacement
    and keep the input order of the chosen samples.
    """
    male = [s for s in samples if _gender(s) == "male"]
    female = [s for s in samples if _gender(s) == "female"]
    male_counts = _counts(male)
    for name, pool in (("male", male), ("female", female)):
        missing = [c for c in _CLASSES if not any(s.label == c for s in pool)]
        if missing:
            raise PreconditionError(f"{name} samples lack class(es) {missing}")
    rng = np.random.default_rng(seed)
    chosen = []
    for c in _CLASSES:
        pool = [i for i, s in enumerate(female) if s.label == c]
        need = male_counts[c]
        if need > len(pool):
            raise InsufficientDataError(
                f"female {c} pool too small: need {need}, have {len(pool)}")
        chosen.extend(pool[i] for i in rng.choice(len(pool), size=need, replace=False))
    down = [female[i] for i in sorted(chosen)]
    return GenderSubsets(male, down, seed, male_counts, _counts(down))


@dataclass
class BootstrapResult:
    observed_diff: float
    p_value: float
    n_resamples: int
    seed: int
    mean_a: float = 0.0
    mean_b: float = 0.0


RESAMPLE_CHUNK = 1000


def _chunk_hits(a, b, observed, n, seed_seq):
    rng = np.random.default_rng(seed_seq)
    ia = rng.integers(0, a.size, size=(n, a.size))
    ib = rng.integers(0, b.size, size=(n, b.size))
    diff = a[ia].mean(axis=1) - b[ib].mean(axis=1)
    # tolerance absorbs summation-order noise in the two means
    return int(np.count_nonzero(np.abs(diff - observed) >= abs(observed) - 1e-12))


def bootstrap_diff_test(correct_a, correct_b, n_resamples=10000, seed=0) -> BootstrapResult:
    """Two-sided bootstrap test of mean(a) - mean(b) with shift recentring.

    Each resample draws ``len(a)`` items from ``a`` and ``len(b)`` from ``b``
    with replacement; the p-value is the share of resampled differences at
    least ``|observed|`` away from the observed difference, clamped to
    ``[1/n_resamples, 1]``.

    Resamples come in chunks of ``RESAMPLE_CHUNK``, chunk ``i`` drawing from
    the ``i``-th child of ``SeedSequence(seed)``, so chunks can be computed in
    any order or in parallel with identical results.
    """
    a = np.asarray(correct_a, dtype=np.float64)
    b = np.asarray(correct_b, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise PreconditionError("both outcome sequences must be nonempty")
    if n_resamples < 100:
        raise ConfigError("n_resamples must be at least 100")
    observed = a.mean() - b.mean()
    n_chunks = -(-n_resamples // RESAMPLE_CHUNK)
    children = np.random.SeedSequence(seed).spawn(n_chunks)
    hits = 0
    for i, child in enumerate(children):
        n = min(RESAMPLE_CHUNK, n_resamples - i * RESAMPLE_CHUNK)
        hits += _chunk_hits(a, b, observed, n, child)
    p = min(1.0, max(hits / n_resamples, 1.0 / n_resamples))
    return BootstrapResult(float(observed), float(p), n_resamples, seed,
                           float(a.mean()), float(b.mean()))


def format_gender_report(male_acc, female_acc, result: BootstrapResult, mode: str) -> str:
    return (f"male_acc={male_acc:.3f} female_acc={female_acc:.3f} "
            f"diff={result.observed_diff:+.3f} p={result.p_value:.4f} "
            f"n_resamples={result.n_resamples} seed={result.seed} mode={mode}\n")
