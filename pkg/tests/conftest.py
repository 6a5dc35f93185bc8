import numpy as np
import pytest

from dementia_nlp.corpus import (
    build_vocabulary, encode_all, extract_utterances, generate_synthetic_corpus, split_corpus,
)
from dementia_nlp.models import default_config, init_model

# tiny configurations that keep finite-difference checks fast
SMALL = {
    "cnn": dict(embed_dim=6, filters_per_size=4),
    "lstm": dict(embed_dim=5, hidden=4),
    "cnn_lstm": dict(embed_dim=5, filters_per_size=3, lstm_hidden=4),
}


def small_model(arch, vocab_size=12, max_len=8, seed=0, scale=None, **kw):
    cfg = default_config(arch, vocab_size, max_len, **{**SMALL[arch], **kw})
    rng = np.random.default_rng(seed)
    m = init_model(arch, cfg, rng)
    if scale is not None:
        for t in m.params.values():
            t.data[...] = rng.uniform(-scale, scale, t.shape)
    return m


def random_batch(rng, vocab_size, lengths, max_len):
    lengths = np.asarray(lengths)
    ids = rng.integers(2, vocab_size, size=(len(lengths), max_len))
    ids[np.arange(max_len)[None] >= lengths[:, None]] = 0
    return ids, lengths


@pytest.fixture(scope="session")
def synth_corpus():
    return generate_synthetic_corpus(40, 0.67, seed=3, utterances_per_transcript=(6, 10))


@pytest.fixture(scope="session")
def synth_utterances(synth_corpus):
    return extract_utterances(synth_corpus, require_pos=True)


@pytest.fixture(scope="session")
def synth_data(synth_utterances):
    vocab = build_vocabulary(synth_utterances, 2396, tagged=True)
    samples = encode_all(synth_utterances, vocab, tagged=True, max_len=64)
    return vocab, samples, split_corpus(samples, seed=1)
