"""CHAT-lite transcripts: one participant interview per file.

A file looks like::

    @Begin
    @ID:	eng|pitt|PAR|66;|female|AD|Cookie
    *PAR:	well okay .
    %mor:	co|well co|okay .
    *INV:	what else ?
    @End

Only *PAR utterances are kept. A %mor tier belongs to the main tier directly
above it; when its item count disagrees with the word count the words are kept
and the tags dropped.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional, Sequence

from ..errors import FormatError

Label = Literal["AD", "Control"]
Task = Literal["Cookie", "Recall", "Other"]
Gender = Literal["male", "female", "unknown"]

LABELS = ("AD", "Control")
TASKS = ("Cookie", "Recall", "Other")
GENDERS = ("male", "female", "unknown")

CORE_TAGS = ("v", "n", "pro", "adv", "det", "aux", "prep", "co", "part", "presp", "adj")

TERMINATORS = (".", "?", "!")
_PUNCT = {".", "?", "!", ",", ";", ":", "+...", "...", "+/.", "+//."}
# %mor items that mark punctuation rather than a word
_PUNCT_TAGS = {"cm", "end", "beg", "bq", "eq", "punct"}
_TIER_RE = re.compile(r"^([*%@][A-Za-z]+)(:)?[ \t]*(.*)$")


def normalize_tag(raw: str) -> str:
    """Reduce a %mor category such as ``pro:sub`` or ``N`` to its core tag."""
    tag = raw.split(":", 1)[0].strip().lower()
    if not tag or any(ch.isspace() for ch in tag):
        raise ValueError(f"invalid POS tag {raw!r}")
    return tag


@dataclass(frozen=True)
class Utterance:
    transcript_id: str
    index: int
    words: tuple[str, ...]
    pos: Optional[tuple[str, ...]]
    label: Label
    task: Task
    gender: Gender
    terminator: str = "."

    def __post_init__(self):
        if not self.words:
            raise ValueError("utterance has no words")
        if self.pos is not None and len(self.pos) != len(self.words):
            raise ValueError("pos and words differ in length")

    @property
    def key(self):
        return (self.transcript_id, self.index)


@dataclass(frozen=True)
class Transcript:
    id: str
    diagnosis: Label
    gender: Gender
    task: Task
    utterances: tuple[Utterance, ...] = ()
    language: str = "eng"
    corpus: str = "pitt"
    age: str = ""

    def __post_init__(self):
        for i, u in enumerate(self.utterances):
            if u.index != i:
                raise ValueError("utterance indices must be contiguous from 0")


def _split_words(text):
    words = []
    terminator = "."
    for tok in text.split():
        if tok in TERMINATORS:
            terminator = tok
            continue
        if tok in _PUNCT:
            continue
        # terminal punctuation glued to the last word
        while tok and tok[-1] in ".?!,;:":
            if tok[-1] in TERMINATORS:
                terminator = tok[-1]
            tok = tok[:-1]
        if tok:
            words.append(tok.lower())
    return words, terminator


def _mor_tags(text):
    tags = []
    for item in text.split():
        if item in _PUNCT:
            continue
        head = item.split("~", 1)[0]
        if "|" not in head:
            # bare tokens that are not punctuation still count as an item
            tags.append(None)
            continue
        cat = head.split("|", 1)[0]
        try:
            tag = normalize_tag(cat)
        except ValueError:
            tags.append(None)
            continue
        if tag in _PUNCT_TAGS:
            continue
        tags.append(tag)
    return tags


def _parse_id(value, lineno):
    fields = [f.strip() for f in value.split("|")]
    if len(fields) < 7:
        raise FormatError(f"@ID needs 7 '|'-separated fields, found {len(fields)}", lineno)
    lang, corpus, role, age, gender, diagnosis, task = fields[:7]
    if role != "PAR":
        raise FormatError(f"@ID role must be PAR, got {role!r}", lineno)
    if gender not in GENDERS:
        raise FormatError(f"@ID gender must be one of {GENDERS}, got {gender!r}", lineno)
    if diagnosis not in LABELS:
        raise FormatError(f"@ID diagnosis must be one of {LABELS}, got {diagnosis!r}", lineno)
    if task not in TASKS:
        raise FormatError(f"@ID task must be one of {TASKS}, got {task!r}", lineno)
    return lang, corpus, age, gender, diagnosis, task


def _logical_lines(text):
    """Join CHAT continuation lines (leading whitespace) onto their tier."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        if raw[0] in " \t" and out:
            start, prev = out[-1]
            out[-1] = (start, prev + " " + raw.strip())
        else:
            out.append((lineno, raw.rstrip()))
    return out


def parse_chat(file_text: str, transcript_id: str = "") -> Transcript:
    lines = _logical_lines(file_text.lstrip("﻿"))
    if not lines:
        raise FormatError("empty file")
    if lines[0][1] != "@Begin":
        raise FormatError("first line must be @Begin", lines[0][0])

    header = None
    ended = False
    rows = []  # [words, terminator, tags or None, has_mor]
    last_main = None  # "PAR", "INV", ... of the most recent main tier
    seen_par = False
    for lineno, line in lines[1:]:
        if ended:
            raise FormatError("content after @End", lineno)
        if line == "@End":
            ended = True
            continue
        m = _TIER_RE.match(line)
        if not m:
            raise FormatError(f"unrecognised line {line[:40]!r}", lineno)
        name, colon, value = m.groups()
        if name.startswith("@"):
            if name == "@ID":
                if header is not None:
                    raise FormatError("duplicate @ID header", lineno)
                header = _parse_id(value, lineno)
            continue
        if not colon:
            raise FormatError(f"tier {name} lacks ':'", lineno)
        if name.startswith("*"):
            if header is None:
                raise FormatError("main tier before @ID header", lineno)
            last_main = name[1:]
            if last_main == "PAR":
                seen_par = True
                words, term = _split_words(value)
                rows.append([words, term, None, False] if words else None)
            continue
        # dependent tier
        if not seen_par:
            raise FormatError(f"{name} tier before any *PAR line", lineno)
        if last_main != "PAR" or name.lower() != "%mor":
            continue
        row = rows[-1]
        if row is None:
            continue
        if row[3]:
            raise FormatError("second %mor tier for one utterance", lineno)
        row[3] = True
        tags = _mor_tags(value)
        if len(tags) == len(row[0]) and all(t is not None for t in tags):
            row[2] = tuple(tags)
    if header is None:
        raise FormatError("missing @ID header")
    if not ended:
        raise FormatError("missing @End")

    lang, corpus, age, gender, diagnosis, task = header
    utts = []
    for words, term, tags, _ in filter(None, rows):
        utts.append(Utterance(transcript_id, len(utts), tuple(words), tags,
                              diagnosis, task, gender, term))
    return Transcript(transcript_id, diagnosis, gender, task, tuple(utts), lang, corpus, age)


def serialize_chat(t: Transcript) -> str:
    lines = [
        "@Begin",
        f"@ID:\t{t.language}|{t.corpus}|PAR|{t.age}|{t.gender}|{t.diagnosis}|{t.task}",
    ]
    for u in t.utterances:
        lines.append(f"*PAR:\t{' '.join(u.words)} {u.terminator}")
        if u.pos is not None:
            items = " ".join(f"{tag}|{w}" for tag, w in zip(u.pos, u.words))
            lines.append(f"%mor:\t{items} {u.terminator}")
    lines.append("@End")
    return "\n".join(lines) + "\n"


def read_corpus(directory) -> list[Transcript]:
    """Parse every ``*.cha`` file in ``directory`` (sorted by name)."""
    paths = sorted(Path(directory).glob("*.cha"))
    out = []
    for p in paths:
        try:
            out.append(parse_chat(p.read_text(encoding="utf-8"), transcript_id=p.stem))
        except FormatError as exc:
            raise FormatError(f"{p.name}: {exc}") from exc
    return out


def write_corpus(transcripts: Sequence[Transcript], directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for t in transcripts:
        p = d / f"{t.id}.cha"
        p.write_bytes(serialize_chat(t).encode("utf-8"))
        paths.append(p)
    return paths


def extract_utterances(corpus: Sequence[Transcript], require_pos=False) -> list[Utterance]:
    out = []
    for t in corpus:
        for u in t.utterances:
            if require_pos and u.pos is None:
                continue
            out.append(u)
    return out
