"""Tokenization helpers shared across retrieval, labeling, and metrics.

Two tokenizers are used throughout and pinned here so that every consumer
(retrieval index, entailment labeler, BLEU scorer, reader vocabulary) agrees:

* ``word_tokenize`` keeps punctuation marks as separate tokens. Used by the
  reader vocabulary and the BLEU scorer.
* ``content_tokenize`` keeps only alphanumeric tokens. Used by the TF-IDF
  index and the edit-distance labeler, which should be robust to
  casing/punctuation noise.

Both lowercase their input.
"""

from __future__ import annotations

import re

_WORD_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")
_CONTENT_RE = re.compile(r"[a-z0-9]+")


def word_tokenize(text: str) -> list[str]:
    """Lowercase and split into word and punctuation tokens."""
    return _WORD_RE.findall(text.lower())


def content_tokenize(text: str) -> list[str]:
    """Lowercase and keep alphanumeric tokens only."""
    return _CONTENT_RE.findall(text.lower())


def detokenize(tokens: list[str]) -> str:
    """Inverse of :func:`word_tokenize` up to spacing: space-join the tokens."""
    return " ".join(tokens)


def normalize_whitespace(text: str) -> str:
    return " ".join(text.split())
