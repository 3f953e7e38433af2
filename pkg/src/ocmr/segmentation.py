"""Rule-based elementary discourse unit (EDU) segmentation.

Rule bodies are split behind a pluggable interface so a learned segmenter can
be substituted in full-scale mode. The default is deterministic:

1. whitespace-normalize the body and split it into sentences (a sentence ends
   at a token whose trailing character, ignoring closing quotes/brackets, is
   ``.``, ``!`` or ``?``);
2. within each sentence, start a new EDU before every bullet token and before
   every clause-initial discourse marker. Multi-token markers are matched
   longest-first so "or if" wins over "if" at the same position.

Joining the EDUs with single spaces reconstructs the whitespace-normalized
body: no characters are dropped. If a body yields more than ``max_edus``
units, the tail units are merged into the last kept unit (a warning is
logged), which caps the list length while preserving coverage.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, replace
from typing import Callable

from .corpus import KnowledgeBase, RuleDocument
from .errors import EmptyInputError, ValidationError

logger = logging.getLogger(__name__)

DEFAULT_MARKERS = ("if", "unless", "or if", "and if", "provided", "when")
DEFAULT_BULLETS = (r"^[-*•]$", r"^\(?\d+[.)]$", r"^\(?[a-z][.)]$")

_TRAILING_CLOSERS = "\"')]}”’"


@dataclass(frozen=True)
class SegmenterConfig:
    discourse_markers: tuple[str, ...] = DEFAULT_MARKERS
    bullet_patterns: tuple[str, ...] = DEFAULT_BULLETS
    max_edus: int = 32

    def __post_init__(self):
        if self.max_edus < 1:
            raise ValidationError("max_edus must be >= 1")
        if not self.discourse_markers:
            raise ValidationError("discourse marker list must be non-empty")


def _core(token: str) -> str:
    """Token stripped to its comparable word form."""
    return token.strip(".,;:!?\"'()[]{}").lower()


def _is_sentence_end(token: str) -> bool:
    return token.rstrip(_TRAILING_CLOSERS).endswith((".", "!", "?"))


def _marker_token_lists(config: SegmenterConfig) -> list[list[str]]:
    markers = [m.lower().split() for m in config.discourse_markers]
    # longest first so multi-word markers absorb their head word
    markers.sort(key=len, reverse=True)
    return markers


def segment(body: str, config: SegmenterConfig | None = None) -> list[str]:
    """Split ``body`` into EDU strings, in document order."""
    config = config or SegmenterConfig()
    tokens = body.split()
    if not tokens:
        raise EmptyInputError("cannot segment an empty body")

    bullet_res = [re.compile(p) for p in config.bullet_patterns]
    markers = _marker_token_lists(config)

    # sentence boundaries
    sentences: list[list[str]] = []
    current: list[str] = []
    for token in tokens:
        current.append(token)
        if _is_sentence_end(token):
            sentences.append(current)
            current = []
    if current:
        sentences.append(current)

    edus: list[str] = []
    for sentence in sentences:
        cores = [_core(t) for t in sentence]
        cuts = [0]
        i = 1
        while i < len(sentence):
            if any(r.match(sentence[i]) for r in bullet_res):
                cuts.append(i)
                i += 1
                continue
            matched = 0
            for marker in markers:
                if cores[i : i + len(marker)] == marker:
                    matched = len(marker)
                    break
            if matched:
                cuts.append(i)
                i += matched
            else:
                i += 1
        for start, end in zip(cuts, cuts[1:] + [len(sentence)]):
            edus.append(" ".join(sentence[start:end]))

    if len(edus) > config.max_edus:
        logger.warning(
            "segmentation produced %d EDUs, capping at %d (tail merged)",
            len(edus),
            config.max_edus,
        )
        head = edus[: config.max_edus - 1]
        tail = " ".join(edus[config.max_edus - 1 :])
        edus = head + [tail]
    return edus


Segmenter = Callable[[str], list[str]]


def segment_document(
    doc: RuleDocument,
    config: SegmenterConfig | None = None,
    segmenter: Segmenter | None = None,
) -> RuleDocument:
    split = segmenter or (lambda body: segment(body, config))
    try:
        edus = split(doc.body)
    except EmptyInputError as exc:
        raise EmptyInputError(f"doc {doc.doc_id!r}: {exc}") from exc
    if not edus:
        raise EmptyInputError(f"doc {doc.doc_id!r}: segmenter returned no EDUs")
    return replace(doc, edus=tuple(edus))


def segment_kb(
    kb: KnowledgeBase,
    config: SegmenterConfig | None = None,
    segmenter: Segmenter | None = None,
) -> KnowledgeBase:
    """Return a knowledge base with every document's ``edus`` populated.

    Idempotent: segmentation is derived from the body alone. A custom
    ``segmenter`` callable (body -> EDU list) replaces the rule-based default,
    e.g. a learned model in full-scale mode.
    """
    documents = {
        doc_id: segment_document(doc, config, segmenter)
        for doc_id, doc in kb.documents.items()
    }
    return replace(kb, documents=documents)
