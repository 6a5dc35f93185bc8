"""Cluster CNN-LSTM activations, list POS patterns per cluster, render a saliency map."""

import numpy as np

from dementia_nlp.corpus import (
    build_vocabulary, encode_all, extract_utterances, generate_synthetic_corpus, split_corpus,
)
from dementia_nlp.interpret import (
    capture_activations, cluster_pos_patterns, format_cluster_report, kmeans_restarts,
    render_heatmap, saliency,
)
from dementia_nlp.models import default_config, init_model
from dementia_nlp.training import TrainConfig, train

corpus = generate_synthetic_corpus(60, 0.67, seed=3)
utts = extract_utterances(corpus, require_pos=True)
vocab = build_vocabulary(utts, tagged=True)
split = split_corpus(encode_all(utts, vocab, True, 64), seed=0)
cfg = default_config("cnn_lstm", len(vocab), 64, embed_dim=32, filters_per_size=16, lstm_hidden=32)
m, _ = train(init_model("cnn_lstm", cfg, np.random.default_rng(0)), split,
             TrainConfig.for_arch("cnn_lstm", max_epochs=8, lr=1e-3))

cookie = [u for u in utts if u.task == "Cookie"]
am = capture_activations(m, cookie, vocab, tagged=True)
patterns = cluster_pos_patterns(kmeans_restarts(am, 4), am)
print(format_cluster_report(patterns))

ad = next(s.source for s in split.test if s.source.label == "AD")
print(render_heatmap(saliency(m, ad, vocab, tagged=True), "text"))
