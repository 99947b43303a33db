"""Transcript normalization and tokenization.

Every WER/CER computation and every filter feature goes through
:func:`normalize` first, so the pass order below is part of the contract:
tag removal, lowercase, punctuation strip, filler drop, whitespace collapse.
"""

from __future__ import annotations

import re
import string
from dataclasses import dataclass, field

DEFAULT_FILLERS: tuple[str, ...] = ("um", "uh", "hmm", "mm", "ah", "er")

TokenSeq = list[str]


def _default_punctuation() -> frozenset[str]:
    # ASCII punctuation minus the apostrophe; non-ASCII symbols are caught by the
    # word-character check in _strip_punctuation.
    return frozenset(c for c in string.punctuation if c != "'")


@dataclass(frozen=True)
class NormalizationConfig:
    filler_words: tuple[str, ...] = DEFAULT_FILLERS
    punctuation_set: frozenset[str] = field(default_factory=_default_punctuation)
    tag_pattern: tuple[str, str] = ("[", "]")

    def __post_init__(self) -> None:
        for w in self.filler_words:
            if not w or w != w.lower() or any(c.isspace() for c in w):
                raise ValueError(f"filler word must be lowercase with no whitespace: {w!r}")
        if len(self.tag_pattern) != 2 or not all(self.tag_pattern):
            raise ValueError(f"tag_pattern must be a pair of non-empty delimiters: {self.tag_pattern!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationConfig":
        allowed = {"filler_words", "punctuation_set", "tag_pattern"}
        unknown = set(d) - allowed
        if unknown:
            raise KeyError(f"unknown normalization key: {sorted(unknown)[0]}")
        kw = {}
        if "filler_words" in d:
            kw["filler_words"] = tuple(d["filler_words"])
        if "punctuation_set" in d:
            kw["punctuation_set"] = frozenset(d["punctuation_set"])
        if "tag_pattern" in d:
            kw["tag_pattern"] = tuple(d["tag_pattern"])
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "filler_words": list(self.filler_words),
            "punctuation_set": "".join(sorted(self.punctuation_set)),
            "tag_pattern": list(self.tag_pattern),
        }


DEFAULT_CONFIG = NormalizationConfig()


def _tag_regex(cfg: NormalizationConfig) -> re.Pattern:
    open_, close = (re.escape(x) for x in cfg.tag_pattern)
    # shortest span between a matched pair; unmatched delimiters are left alone
    return re.compile(f"{open_}.*?{close}", re.DOTALL)


def _strip_punctuation(text: str, punct: frozenset[str]) -> str:
    out = []
    for c in text:
        if c in punct:
            out.append(" ")
        elif c.isspace() or c == "'" or c.isalnum():
            out.append(c)
        else:
            out.append(" ")
    return "".join(out)


def normalize(text: str, cfg: NormalizationConfig = DEFAULT_CONFIG) -> str:
    text = _tag_regex(cfg).sub(" ", text)
    text = text.lower()
    text = _strip_punctuation(text, cfg.punctuation_set)
    fillers = set(cfg.filler_words)
    words = []
    for w in text.split():
        # apostrophes only survive inside a word
        w = w.strip("'")
        if w and w not in fillers:
            words.append(w)
    return " ".join(words)


def tokenize(text: str) -> TokenSeq:
    """Split already-normalized text on single spaces."""
    if not text:
        return []
    return text.split(" ")


def render_chars(seq: TokenSeq) -> str:
    return " ".join(seq)
