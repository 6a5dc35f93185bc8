"""Train the three architectures on a synthetic corpus and compare test accuracy."""

import numpy as np

from dementia_nlp.corpus import (
    build_vocabulary, default_max_len, encode_all, extract_utterances, generate_synthetic_corpus,
    split_corpus,
)
from dementia_nlp.models import default_config, init_model
from dementia_nlp.training import TrainConfig, evaluate, majority_baseline, train

corpus = generate_synthetic_corpus(60, 0.67, seed=2)
utts = extract_utterances(corpus, require_pos=True)

for arch, tagged in [("cnn", False), ("lstm", False), ("cnn_lstm", False), ("cnn_lstm", True)]:
    vocab = build_vocabulary(utts, tagged=tagged)
    max_len = default_max_len(tagged)
    split = split_corpus(encode_all(utts, vocab, tagged, max_len), seed=0)
    # reduced widths keep the demo quick
    cfg = default_config(arch, len(vocab), max_len, embed_dim=32,
                         **({"hidden": 32} if arch == "lstm" else {"filters_per_size": 16}))
    m = init_model(arch, cfg, np.random.default_rng(0))
    m, history = train(m, split, TrainConfig.for_arch(arch, max_epochs=20, lr=3e-3))
    rep = evaluate(m, split.test)
    name = arch + (" (tagged)" if tagged else "")
    print(f"{name:20s} epochs={len(history):2d} test={rep.accuracy:.3f} "
          f"baseline={majority_baseline(split.test):.3f}")
