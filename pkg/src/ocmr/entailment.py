"""Noisy per-EDU entailment labels from the minimum-edit-distance heuristic.

For each dialogue turn, the gold rule's EDU with minimal token-level edit
distance to the turn's follow-up question is labeled ENTAILMENT when the
answer is Yes and CONTRADICTION when it is No; all other EDUs stay NEUTRAL.
Ties break toward the lowest EDU index; when two turns land on the same EDU
the later turn wins. Distances are computed over lowercased alphanumeric
tokens, so casing and punctuation do not matter.

Labels exist only for gold documents. They are cached to a sidecar file that
embeds the segmenter-config hash, and loading with a different hash raises
``StaleCacheError``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

from .corpus import DatasetSplit, DialogueInstance, KnowledgeBase, RuleDocument
from .errors import StaleCacheError, ValidationError
from .text import content_tokenize


class EntailmentLabel(str, Enum):
    ENTAILMENT = "ENTAILMENT"
    CONTRADICTION = "CONTRADICTION"
    NEUTRAL = "NEUTRAL"


@dataclass(frozen=True)
class EntailmentLabelSequence:
    doc_id: str
    labels: tuple[EntailmentLabel, ...]


def edit_distance(a: str, b: str, char_level: bool = False) -> int:
    """Levenshtein distance over the normalized token sequences of a and b
    (or over characters of the normalized strings with ``char_level``)."""
    if char_level:
        ta, tb = " ".join(content_tokenize(a)), " ".join(content_tokenize(b))
    else:
        ta, tb = content_tokenize(a), content_tokenize(b)
    if len(ta) < len(tb):  # iterate over the shorter row
        ta, tb = tb, ta
    previous = list(range(len(tb) + 1))
    for i, tok_a in enumerate(ta, start=1):
        current = [i]
        for j, tok_b in enumerate(tb, start=1):
            cost = 0 if tok_a == tok_b else 1
            current.append(min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost))
        previous = current
    return previous[-1]


def label_instance(
    instance: DialogueInstance,
    gold_doc: RuleDocument,
    max_distance: int | None = None,
    char_level: bool = False,
) -> EntailmentLabelSequence:
    """Heuristic three-way labels for the gold rule's EDUs of one instance.

    ``max_distance`` (off by default) leaves a turn unassigned when even its
    best EDU is farther than the threshold.
    """
    if not gold_doc.edus:
        raise ValidationError(f"doc {gold_doc.doc_id!r} has no EDUs; segment the KB first")
    labels = [EntailmentLabel.NEUTRAL] * len(gold_doc.edus)
    for turn in instance.history:
        distances = [
            edit_distance(turn.follow_up_question, edu, char_level=char_level)
            for edu in gold_doc.edus
        ]
        best = min(range(len(distances)), key=lambda i: (distances[i], i))
        if max_distance is not None and distances[best] > max_distance:
            continue
        labels[best] = (
            EntailmentLabel.ENTAILMENT
            if turn.follow_up_answer == "Yes"
            else EntailmentLabel.CONTRADICTION
        )
    return EntailmentLabelSequence(doc_id=gold_doc.doc_id, labels=tuple(labels))


def label_split(
    split: DatasetSplit,
    kb: KnowledgeBase,
    max_distance: int | None = None,
    char_level: bool = False,
) -> dict[str, EntailmentLabelSequence]:
    """One label sequence per instance, keyed by utterance_id, gold docs only."""
    out: dict[str, EntailmentLabelSequence] = {}
    for instance in split:
        if instance.gold_doc_id not in kb.documents:
            raise ValidationError(
                f"{instance.utterance_id}: gold doc {instance.gold_doc_id!r} missing"
            )
        out[instance.utterance_id] = label_instance(
            instance, kb[instance.gold_doc_id], max_distance=max_distance,
            char_level=char_level,
        )
    return out


def save_labels(labels: dict[str, EntailmentLabelSequence], path, config_hash: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"config_hash": config_hash}) + "\n")
        for utterance_id in sorted(labels):
            seq = labels[utterance_id]
            fh.write(
                json.dumps(
                    {
                        "utterance_id": utterance_id,
                        "doc_id": seq.doc_id,
                        "labels": [label.value for label in seq.labels],
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_labels(path, expected_hash: str | None = None) -> dict[str, EntailmentLabelSequence]:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if expected_hash is not None and header.get("config_hash") != expected_hash:
            raise StaleCacheError(
                f"{path}: label cache was built under config hash "
                f"{header.get('config_hash')!r}, expected {expected_hash!r}"
            )
        out = {}
        for line in fh:
            record = json.loads(line)
            out[record["utterance_id"]] = EntailmentLabelSequence(
                doc_id=record["doc_id"],
                labels=tuple(EntailmentLabel(v) for v in record["labels"]),
            )
    return out
