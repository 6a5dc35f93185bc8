"""Seeded template generator for CHAT-lite corpora.

AD interviews mix short bursts, past-tense clarification questions,
interjection-initial utterances, filler-laden picture descriptions and
adjective/adverb-heavy descriptions. Control interviews describe the picture
with determiner-noun-participle sentences. A small share of AD utterances is
drawn from the control templates and a small share of control utterances are
bursts, so the label is not a deterministic function of the text.

Every word carries the tag of the template slot that produced it, so the
%mor tier is always aligned.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .chat import Transcript, Utterance

WORDS = {
    "DET": ("the", "a", "that", "this"),
    "CN": ("boy", "girl", "cookie", "cookies", "jar", "stool", "mother", "sink", "water",
           "dishes", "window", "curtains", "plate", "floor", "kitchen", "cupboard", "lady",
           "kid", "counter", "cup"),
    "RN": ("man", "woman", "store", "car", "money", "dog", "boat", "name", "town", "house",
           "street", "police", "story", "wallet"),
    "PRESP": ("reaching", "drying", "washing", "falling", "tipping", "overflowing",
              "standing", "taking", "getting", "running", "holding", "looking", "spilling"),
    "PART": ("spilled", "broken", "filled", "dried", "opened", "tipped", "dropped", "turned"),
    "ADJ": ("big", "little", "dirty", "wet", "tall", "nice", "young", "old"),
    "ADV": ("really", "very", "quickly", "just", "too", "there", "out", "over"),
    "PRO": ("she", "he", "it", "they"),
    "AUX": ("is", "are"),
    "PREP": ("on", "in", "from", "for", "to", "at", "of"),
    "FILL": ("uh", "um"),
    "INTERJ": ("well", "oh", "so", "right"),
    "VPAST": ("went", "said", "told", "lost", "found", "took", "got", "saw"),
    "V": ("see", "say", "get", "remember", "know", "think"),
    "QV": ("say", "get", "remember", "tell"),
    "QN": ("facts", "elephant", "any", "that", "everything", "names"),
}

# short answers; tag per word
BURSTS = (("okay", "co"), ("yes", "co"), ("oh", "co"), ("fine", "adj"), ("and", "coord"),
          ("alright", "co"), ("no", "co"), ("mhm", "co"))

# slot = "tag:SOURCE" or "tag=word"; trailing "?" makes the slot optional
TEMPLATES = {
    "clarify": [
        ("v=did pro=i v:QV n:QN", "?"),
        ("v=did pro=i v:QV pro=it", "?"),
        ("v=did pro=i v:QV det:DET n:QN", "?"),
    ],
    "interjection": [
        ("co:INTERJ pro=i adv=just? v:V pro=it", "."),
        ("co:INTERJ pro=i v:V det=a n=lot prep=of co:FILL", "."),
        ("co:INTERJ adv=so? pro:PRO v:V det:DET n:QN", "."),
        ("co:INTERJ pro=i v=gotta v:V pro=it", "."),
    ],
    "filler_cookie": [
        ("coord=and? co:FILL det:DET n:CN co:FILL aux:AUX presp:PRESP", "."),
        ("co:FILL co:FILL det:DET n:CN presp:PRESP co:FILL", "."),
        ("coord=and co:FILL pro:PRO aux:AUX co:FILL presp:PRESP det:DET n:CN", "."),
    ],
    "adjadv_cookie": [
        ("det:DET adj:ADJ n:CN aux:AUX adv:ADV presp:PRESP det:DET n:CN", "."),
        ("det:DET adj:ADJ adj:ADJ n:CN adv:ADV adv:ADV", "."),
        ("det:DET n:CN aux:AUX adv:ADV adj:ADJ n:CN", "."),
        ("adv=there aux=is det:DET adj:ADJ n:CN adv:ADV", "."),
    ],
    "recall_ad": [
        ("co:FILL det=the n:RN co:FILL v:VPAST n:RN", "."),
        ("co:INTERJ pro:PRO v:VPAST co:FILL n:RN co:FILL", "."),
        ("n:RN co:FILL n:RN v:VPAST pro:PRO", "."),
    ],
    "control_cookie": [
        ("det:DET n:CN presp:PRESP det:DET n:CN", "."),
        ("det:DET n:CN aux:AUX presp:PRESP prep:PREP det:DET n:CN", "."),
        ("det:DET n:CN part:PART prep:PREP det:DET n:CN", "."),
        ("det:DET n:CN presp:PRESP det:DET part:PART n:CN", "."),
        ("det:DET n:CN aux:AUX part:PART", "."),
        ("det:DET part:PART n:CN presp:PRESP", "."),
    ],
    "control_recall": [
        ("pro:PRO v:VPAST prep:PREP det:DET n:RN", "."),
        ("det:DET n:RN v:VPAST det:DET n:RN prep:PREP det:DET n:RN", "."),
        ("det:DET n:RN v:VPAST pro:PRO det:DET n:RN", "."),
    ],
}

# family mixtures per (diagnosis, task)
MIXTURES = {
    ("AD", "Cookie"): {"burst": 0.17, "clarify": 0.10, "interjection": 0.18,
                       "filler_cookie": 0.25, "adjadv_cookie": 0.25, "control_cookie": 0.05},
    ("AD", "Recall"): {"burst": 0.20, "clarify": 0.15, "interjection": 0.20,
                       "recall_ad": 0.40, "control_recall": 0.05},
    ("Control", "Cookie"): {"control_cookie": 0.97, "burst": 0.03},
    ("Control", "Recall"): {"control_recall": 0.97, "burst": 0.03},
}

SYNTH_TASKS = ("Cookie", "Recall")
SYNTH_GENDERS = ("male", "female")


def _render(template, rng):
    spec, term = template
    words, tags = [], []
    for slot in spec.split():
        if slot.endswith("?"):
            if rng.random() < 0.5:
                continue
            slot = slot[:-1]
        if "=" in slot:
            tag, word = slot.split("=", 1)
        else:
            tag, src = slot.split(":", 1)
            choices = WORDS[src]
            word = choices[rng.integers(len(choices))]
        words.append(word)
        tags.append(tag)
    return words, tags, term


def _burst(rng):
    n = int(rng.integers(1, 4))
    picks = [BURSTS[rng.integers(len(BURSTS))] for _ in range(n)]
    term = "!" if rng.random() < 0.2 else "."
    return [w for w, _ in picks], [t for _, t in picks], term


def _utterance(family, rng):
    if family == "burst":
        return _burst(rng)
    options = TEMPLATES[family]
    return _render(options[rng.integers(len(options))], rng)


def _range(spec):
    if isinstance(spec, int):
        return spec, spec
    lo, hi = spec
    return int(lo), int(hi)


def generate_synthetic_corpus(n_transcripts: int, ad_fraction=0.67, seed=0,
                              utterances_per_transcript: int | Sequence[int] = (8, 16),
                              with_families=False):
    """Generate ``n_transcripts`` transcripts, ``round(n * ad_fraction)`` of them AD.

    With ``with_families`` a second value maps ``(transcript_id, index)`` to the
    template family that produced the utterance.
    """
    if n_transcripts < 2:
        raise ValueError("need at least two transcripts")
    if not 0.0 < ad_fraction < 1.0:
        raise ValueError("ad_fraction must lie strictly between 0 and 1")
    lo, hi = _range(utterances_per_transcript)
    if lo < 1 or hi < lo:
        raise ValueError("invalid utterances_per_transcript")
    rng = np.random.default_rng(seed)
    n_ad = math.floor(n_transcripts * ad_fraction + 0.5)
    diagnoses = ["AD"] * n_ad + ["Control"] * (n_transcripts - n_ad)
    diagnoses = [diagnoses[i] for i in rng.permutation(n_transcripts)]
    width = max(4, len(str(n_transcripts - 1)))

    transcripts = []
    families = {}
    for i, diagnosis in enumerate(diagnoses):
        tid = f"synth{i:0{width}d}"
        gender = SYNTH_GENDERS[rng.integers(len(SYNTH_GENDERS))]
        task = SYNTH_TASKS[rng.integers(len(SYNTH_TASKS))]
        age = f"{int(rng.integers(55, 90))};"
        mix = MIXTURES[(diagnosis, task)]
        names = list(mix)
        probs = np.array([mix[k] for k in names])
        probs = probs / probs.sum()
        n_utts = int(rng.integers(lo, hi + 1))
        utts = []
        for j in range(n_utts):
            family = names[rng.choice(len(names), p=probs)]
            words, tags, term = _utterance(family, rng)
            utts.append(Utterance(tid, j, tuple(words), tuple(tags), diagnosis, task, gender, term))
            families[(tid, j)] = family
        transcripts.append(Transcript(tid, diagnosis, gender, task, tuple(utts),
                                      "eng", "synth", age))
    if with_families:
        return transcripts, families
    return transcripts
