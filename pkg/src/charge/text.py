"""Text normalization, sentence splitting, and tokenization.

The `normalize` form defined here is the single equality domain used for
string comparisons everywhere downstream (keypoint dedup, judge tier 1,
recall sentence containment, question dedup).
"""

from __future__ import annotations

import re
import unicodedata

# Trailing tokens that end with '.' but do not end a sentence.
_ABBREVIATIONS = {
    "mr.", "mrs.", "ms.", "dr.", "prof.", "st.", "jr.", "sr.",
    "vs.", "etc.", "e.g.", "i.e.", "cf.", "al.", "fig.", "figs.",
    "no.", "nos.", "vol.", "approx.", "est.", "dept.", "inc.",
    "u.s.", "u.k.", "u.n.",
}

_BOUNDARY = re.compile(r'([.?!]["\')\]”’]*)(\s+)(?=["\'“‘A-Z0-9])')
_WS = re.compile(r"\s+")
_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


def normalize(s: str) -> str:
    """Canonical comparison form: NFC, casefolded, whitespace collapsed."""
    s = unicodedata.normalize("NFC", s)
    return _WS.sub(" ", s).strip().lower()


def word_count(s: str) -> int:
    return len(s.split())


def split_sentences(text: str) -> list[str]:
    """Split on sentence-final punctuation followed by whitespace and an
    uppercase letter, quote, or digit. A short abbreviation stop-list keeps
    tokens like "U.S." or "Dr." from ending a sentence.
    """
    text = _WS.sub(" ", text).strip()
    if not text:
        return []
    sentences = []
    start = 0
    for m in _BOUNDARY.finditer(text):
        candidate = text[start : m.end(1)]
        last_word = candidate.rsplit(" ", 1)[-1].lower()
        if last_word in _ABBREVIATIONS:
            continue
        sentences.append(candidate.strip())
        start = m.end()
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


def tokenize(s: str) -> list[str]:
    """BM25 tokenizer: lowercase, split on non-alphanumerics, drop 1-char tokens."""
    return [t for t in _TOKEN_SPLIT.split(s.lower()) if len(t) > 1]
