import pytest
import torch

from ocmr.corpus import (
    DatasetSplit,
    DialogueInstance,
    DialogueTurn,
    KnowledgeBase,
    RuleDocument,
)
from ocmr.segmentation import SegmenterConfig, segment_kb
from ocmr.synthetic import SyntheticSpec, generate

torch.set_num_threads(2)


def make_kb(bodies: dict[str, str], seen: set[str] | None = None) -> KnowledgeBase:
    documents = {
        doc_id: RuleDocument(doc_id=doc_id, title=f"Rule {doc_id}", body=body)
        for doc_id, body in bodies.items()
    }
    seen = set(bodies) if seen is None else seen
    return KnowledgeBase(
        documents=documents,
        seen_ids=frozenset(seen),
        unseen_ids=frozenset(set(bodies) - seen),
    )


def make_instance(uid="u1", gold="d1", question="Can I qualify?", scenario="",
                  history=(), gold_answer="Yes") -> DialogueInstance:
    return DialogueInstance(
        utterance_id=uid,
        tree_id=f"{uid}-tree",
        gold_doc_id=gold,
        question=question,
        scenario=scenario,
        history=tuple(DialogueTurn(q, a) for q, a in history),
        gold_answer=gold_answer,
    )


@pytest.fixture
def toy_kb() -> KnowledgeBase:
    kb = make_kb(
        {
            "d1": "You qualify if you are over 65, or if you are disabled.",
            "d2": "You can claim the grant if you live in the city.",
            "d3": "Applicants must own a boat.",
        }
    )
    return segment_kb(kb, SegmenterConfig())


@pytest.fixture(scope="session")
def small_world():
    """A small synthetic world shared by unit tests (not the acceptance runs)."""
    return generate(SyntheticSpec(num_rules=12, vocab_size=80, num_train=60,
                                  num_dev=30, num_test=30, seed=7))


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")
