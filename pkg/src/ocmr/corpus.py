"""Knowledge base and dialogue dataset: loading, validation, serving.

On-disk format (see docs/data_formats.md): UTF-8 JSON Lines.

* knowledge base file: one record per line with ``doc_id``, ``title``,
  ``body``, ``seen`` (bool) and optionally ``edus``.
* split file: one dialogue instance per line with ``utterance_id``,
  ``tree_id``, ``gold_doc_id``, ``question``, ``scenario``, ``history``
  (list of ``{follow_up_question, follow_up_answer}``), ``gold_answer``
  and ``evidence`` (opaque string list, stored verbatim, never consumed).

Loaded corpora are immutable after construction and safe for concurrent
reads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .errors import ParseError, ValidationError


class Decision(str, Enum):
    YES = "Yes"
    NO = "No"
    INQUIRE = "Inquire"


@dataclass(frozen=True)
class RuleDocument:
    """One rule text. ``edus`` is filled by the segmenter."""

    doc_id: str
    title: str
    body: str
    edus: tuple[str, ...] = ()


@dataclass
class KnowledgeBase:
    documents: dict[str, RuleDocument]
    seen_ids: frozenset[str]
    unseen_ids: frozenset[str]

    def __post_init__(self):
        all_ids = set(self.documents)
        if self.seen_ids | self.unseen_ids != all_ids or self.seen_ids & self.unseen_ids:
            raise ValidationError("seen/unseen ids must partition the knowledge base")

    def __len__(self) -> int:
        return len(self.documents)

    def __getitem__(self, doc_id: str) -> RuleDocument:
        return self.documents[doc_id]


@dataclass(frozen=True)
class DialogueTurn:
    follow_up_question: str
    follow_up_answer: str  # "Yes" or "No"

    def __post_init__(self):
        if self.follow_up_answer not in ("Yes", "No"):
            raise ValidationError(
                f"follow_up_answer must be 'Yes' or 'No', got {self.follow_up_answer!r}"
            )


@dataclass(frozen=True)
class DialogueInstance:
    utterance_id: str
    tree_id: str
    gold_doc_id: str
    question: str
    scenario: str
    history: tuple[DialogueTurn, ...]
    gold_answer: str
    evidence: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.gold_answer:
            raise ValidationError(f"{self.utterance_id}: gold_answer must be non-empty")


@dataclass
class DatasetSplit:
    name: str
    instances: list[DialogueInstance] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)


def classify_answer(text: str) -> Decision:
    """Map an answer string to its decision class: trim, then case-insensitive
    comparison against "Yes"/"No"; anything else is Inquire."""
    stripped = text.strip().lower()
    if stripped == "yes":
        return Decision.YES
    if stripped == "no":
        return Decision.NO
    return Decision.INQUIRE


def decision_class(instance: DialogueInstance) -> Decision:
    return classify_answer(instance.gold_answer)


def instance_subset(instance: DialogueInstance, kb: KnowledgeBase) -> str:
    """Seen/unseen membership, determined by gold_doc_id membership in seen_ids."""
    return "seen" if instance.gold_doc_id in kb.seen_ids else "unseen"


def _read_jsonl(path):
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, line_no, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(record, dict):
                raise ParseError(path, line_no, "record must be a JSON object")
            yield line_no, record


def _require(record: dict, key: str, path, line_no):
    if key not in record:
        raise ParseError(path, line_no, f"missing field {key!r}")
    return record[key]


def load_knowledge_base(path) -> KnowledgeBase:
    """Load and validate a knowledge base file. Duplicate doc_ids are an error."""
    documents: dict[str, RuleDocument] = {}
    seen: set[str] = set()
    unseen: set[str] = set()
    for line_no, record in _read_jsonl(path):
        doc_id = _require(record, "doc_id", path, line_no)
        if doc_id in documents:
            raise ValidationError(f"{path}:{line_no}: duplicate doc_id {doc_id!r}")
        doc = RuleDocument(
            doc_id=doc_id,
            title=_require(record, "title", path, line_no),
            body=_require(record, "body", path, line_no),
            edus=tuple(record.get("edus", ())),
        )
        documents[doc_id] = doc
        if _require(record, "seen", path, line_no):
            seen.add(doc_id)
        else:
            unseen.add(doc_id)
    return KnowledgeBase(documents=documents, seen_ids=frozenset(seen), unseen_ids=frozenset(unseen))


def load_split(path, kb: KnowledgeBase, name: str | None = None) -> DatasetSplit:
    """Load a dataset split; every gold_doc_id must resolve in ``kb``."""
    path = Path(path)
    instances: list[DialogueInstance] = []
    for line_no, record in _read_jsonl(path):
        gold_doc_id = _require(record, "gold_doc_id", path, line_no)
        if gold_doc_id not in kb.documents:
            raise ValidationError(
                f"{path}:{line_no}: gold_doc_id {gold_doc_id!r} not in knowledge base"
            )
        turns = []
        for turn in _require(record, "history", path, line_no):
            answer = turn.get("follow_up_answer")
            if answer not in ("Yes", "No"):
                raise ParseError(path, line_no, f"unknown follow_up_answer {answer!r}")
            turns.append(
                DialogueTurn(
                    follow_up_question=turn.get("follow_up_question", ""),
                    follow_up_answer=answer,
                )
            )
        instances.append(
            DialogueInstance(
                utterance_id=_require(record, "utterance_id", path, line_no),
                tree_id=_require(record, "tree_id", path, line_no),
                gold_doc_id=gold_doc_id,
                question=_require(record, "question", path, line_no),
                scenario=_require(record, "scenario", path, line_no),
                history=tuple(turns),
                gold_answer=_require(record, "gold_answer", path, line_no),
                evidence=tuple(record.get("evidence", ())),
            )
        )
    return DatasetSplit(name=name or path.stem, instances=instances)


def save_knowledge_base(kb: KnowledgeBase, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for doc_id in sorted(kb.documents):
            doc = kb.documents[doc_id]
            record = {
                "doc_id": doc.doc_id,
                "title": doc.title,
                "body": doc.body,
                "seen": doc.doc_id in kb.seen_ids,
            }
            if doc.edus:
                record["edus"] = list(doc.edus)
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def save_split(split: DatasetSplit, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for inst in split.instances:
            record = {
                "utterance_id": inst.utterance_id,
                "tree_id": inst.tree_id,
                "gold_doc_id": inst.gold_doc_id,
                "question": inst.question,
                "scenario": inst.scenario,
                "history": [
                    {
                        "follow_up_question": t.follow_up_question,
                        "follow_up_answer": t.follow_up_answer,
                    }
                    for t in inst.history
                ],
                "gold_answer": inst.gold_answer,
                "evidence": list(inst.evidence),
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def with_document(kb: KnowledgeBase, doc: RuleDocument) -> KnowledgeBase:
    """Return a new knowledge base with ``doc`` replacing its current version."""
    documents = dict(kb.documents)
    documents[doc.doc_id] = doc
    return replace(kb, documents=documents)
