"""Transcript parsing, vocabulary, encoding, splitting and synthetic corpora."""

from .chat import (
    CORE_TAGS, GENDERS, LABELS, TASKS, Transcript, Utterance, extract_utterances,
    normalize_tag, parse_chat, read_corpus, serialize_chat, write_corpus,
)
from .encoding import (
    CLASS_INDEX, CLASS_NAMES, OOV, OOV_ID, PAD, PAD_ID, CorpusSplit, EncodedSample,
    Vocabulary, batch_arrays, build_vocabulary, decode, default_max_len, encode_all,
    encode_utterance, pos_token, split_corpus, utterance_tokens,
)
from .synth import generate_synthetic_corpus
