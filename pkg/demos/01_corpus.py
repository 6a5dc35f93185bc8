"""Generate a synthetic corpus, round-trip it through CHAT-lite and encode it."""

from collections import Counter

from dementia_nlp.corpus import (
    build_vocabulary, decode, encode_all, extract_utterances, generate_synthetic_corpus, parse_chat,
    serialize_chat, split_corpus,
)

corpus = generate_synthetic_corpus(40, ad_fraction=0.67, seed=1)
print(Counter(t.diagnosis for t in corpus))

text = serialize_chat(corpus[0])
print(text[:300])
assert parse_chat(text, corpus[0].id) == corpus[0]

utts = extract_utterances(corpus, require_pos=True)
vocab = build_vocabulary(utts, tagged=True)
samples = encode_all(utts, vocab, tagged=True, max_len=64)
split = split_corpus(samples, seed=0)
print(f"{len(utts)} utterances, vocabulary {len(vocab)}, "
      f"split {len(split.train)}/{len(split.dev)}/{len(split.test)}")
print("first sample:", " ".join(decode(samples[0], vocab)))
