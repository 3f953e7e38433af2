import json

import pytest
from hypothesis import given, strategies as st

from ocmr.corpus import (
    Decision,
    classify_answer,
    decision_class,
    instance_subset,
    load_knowledge_base,
    load_split,
    save_knowledge_base,
    save_split,
)
from ocmr.errors import ParseError, ValidationError

from conftest import make_instance


def write_jsonl(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")


KB_RECORDS = [
    {"doc_id": "a", "title": "A", "body": "Body of a.", "seen": True},
    {"doc_id": "b", "title": "B", "body": "Body of b.", "seen": False},
]


def test_load_knowledge_base_two_records(tmp_path):
    path = tmp_path / "kb.jsonl"
    write_jsonl(path, KB_RECORDS)
    kb = load_knowledge_base(path)
    assert len(kb) == 2
    assert kb["a"].title == "A"
    assert kb.seen_ids == {"a"} and kb.unseen_ids == {"b"}


def test_duplicate_doc_id_rejected(tmp_path):
    path = tmp_path / "kb.jsonl"
    write_jsonl(path, KB_RECORDS + [dict(KB_RECORDS[0])])
    with pytest.raises(ValidationError, match="duplicate doc_id"):
        load_knowledge_base(path)


def test_malformed_record_names_line(tmp_path):
    path = tmp_path / "kb.jsonl"
    path.write_text('{"doc_id": "a", "title": "A", "body": "x", "seen": true}\n{oops\n',
                    encoding="utf-8")
    with pytest.raises(ParseError) as err:
        load_knowledge_base(path)
    assert err.value.line_no == 2


def test_missing_field_is_parse_error(tmp_path):
    path = tmp_path / "kb.jsonl"
    write_jsonl(path, [{"doc_id": "a", "title": "A", "seen": True}])
    with pytest.raises(ParseError, match="body"):
        load_knowledge_base(path)


def make_split_record(uid="u1", gold="a", answer="Yes", history=None):
    return {
        "utterance_id": uid,
        "tree_id": "t1",
        "gold_doc_id": gold,
        "question": "Q?",
        "scenario": "S.",
        "history": history if history is not None else [],
        "gold_answer": answer,
        "evidence": [],
    }


@pytest.fixture
def kb(tmp_path):
    path = tmp_path / "kb.jsonl"
    write_jsonl(path, KB_RECORDS)
    return load_knowledge_base(path)


def test_load_split_empty_file(tmp_path, kb):
    path = tmp_path / "train.jsonl"
    path.write_text("", encoding="utf-8")
    split = load_split(path, kb, name="train")
    assert len(split) == 0


def test_load_split_dangling_gold(tmp_path, kb):
    path = tmp_path / "train.jsonl"
    write_jsonl(path, [make_split_record(gold="missing")])
    with pytest.raises(ValidationError, match="missing"):
        load_split(path, kb)


def test_load_split_bad_answer(tmp_path, kb):
    path = tmp_path / "train.jsonl"
    write_jsonl(path, [make_split_record(history=[
        {"follow_up_question": "Q?", "follow_up_answer": "Maybe"}
    ])])
    with pytest.raises(ParseError, match="Maybe"):
        load_split(path, kb)


def test_history_order_preserved(tmp_path, kb):
    history = [
        {"follow_up_question": f"Q{i}?", "follow_up_answer": "Yes"} for i in range(4)
    ]
    path = tmp_path / "train.jsonl"
    write_jsonl(path, [make_split_record(history=history)])
    split = load_split(path, kb)
    assert [t.follow_up_question for t in split.instances[0].history] == [
        "Q0?", "Q1?", "Q2?", "Q3?"
    ]


def test_round_trip(tmp_path, kb):
    split_path = tmp_path / "dev.jsonl"
    write_jsonl(split_path, [make_split_record(), make_split_record(uid="u2", answer="Do you work?")])
    split = load_split(split_path, kb, name="dev")

    out_kb, out_split = tmp_path / "kb2.jsonl", tmp_path / "dev2.jsonl"
    save_knowledge_base(kb, out_kb)
    save_split(split, out_split)
    kb2 = load_knowledge_base(out_kb)
    split2 = load_split(out_split, kb2, name="dev")
    assert kb2.documents == kb.documents
    assert kb2.seen_ids == kb.seen_ids
    assert split2.instances == split.instances

    # serialization is normalized: a second round trip is byte-identical
    out_kb3, out_split3 = tmp_path / "kb3.jsonl", tmp_path / "dev3.jsonl"
    save_knowledge_base(kb2, out_kb3)
    save_split(split2, out_split3)
    assert out_kb3.read_bytes() == out_kb.read_bytes()
    assert out_split3.read_bytes() == out_split.read_bytes()


@pytest.mark.parametrize(
    "answer,expected",
    [
        ("Yes", Decision.YES),
        ("no ", Decision.NO),
        ("  YES  ", Decision.YES),
        ("Do you live in the UK?", Decision.INQUIRE),
        ("noon", Decision.INQUIRE),
    ],
)
def test_decision_class(answer, expected):
    assert decision_class(make_instance(gold_answer=answer)) is expected


@given(st.text(min_size=1))
def test_decision_class_total_and_deterministic(answer):
    first = classify_answer(answer)
    assert first in (Decision.YES, Decision.NO, Decision.INQUIRE)
    assert classify_answer(answer) is first


def test_seen_unseen_partition(kb):
    seen = make_instance(gold="a")
    unseen = make_instance(gold="b")
    assert instance_subset(seen, kb) == "seen"
    assert instance_subset(unseen, kb) == "unseen"
