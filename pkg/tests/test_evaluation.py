import itertools
import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from ocmr.corpus import Decision
from ocmr.errors import EmptyInputError, ValidationError
from ocmr.evaluation import (
    PredictionRecord,
    bleu,
    decision_metrics,
    f1_bleu,
    summarize,
)
from ocmr.text import word_tokenize


# --- independent BLEU oracle -----------------------------------------------------
# Written before the main implementation and kept deliberately different in
# structure: explicit n-gram dictionaries, no shared helpers.


def oracle_bleu(candidate, reference, max_n):
    if len(candidate) == 0:
        return 0.0
    precisions = []
    for n in range(1, max_n + 1):
        cand_grams = {}
        for i in range(max(len(candidate) - n + 1, 0)):
            gram = tuple(candidate[i : i + n])
            cand_grams[gram] = cand_grams.get(gram, 0) + 1
        ref_grams = {}
        for i in range(max(len(reference) - n + 1, 0)):
            gram = tuple(reference[i : i + n])
            ref_grams[gram] = ref_grams.get(gram, 0) + 1
        overlap = 0
        for gram, count in cand_grams.items():
            overlap += min(count, ref_grams.get(gram, 0))
        total = max(len(candidate) - n + 1, 0)
        if n == 1:
            if overlap == 0:
                return 0.0
            precisions.append(overlap / total)
        else:
            precisions.append((overlap + 1) / (total + 1))
    geo_mean = math.exp(sum(math.log(p) for p in precisions) / max_n)
    if len(candidate) > len(reference):
        bp = 1.0
    else:
        bp = math.exp(1 - len(reference) / len(candidate))
    return bp * geo_mean


def oracle_f1_bleu(records, max_n):
    precisions, recalls = [], []
    for r in records:
        matched = (
            r.predicted_decision is Decision.INQUIRE
            and r.gold_decision is Decision.INQUIRE
        )
        score = (
            oracle_bleu(word_tokenize(r.predicted_question), word_tokenize(r.gold_question), max_n)
            if matched
            else 0.0
        )
        if r.predicted_decision is Decision.INQUIRE:
            precisions.append(score)
        if r.gold_decision is Decision.INQUIRE:
            recalls.append(score)
    if not precisions or not recalls:
        return 0.0
    p = sum(precisions) / len(precisions)
    r = sum(recalls) / len(recalls)
    if p + r == 0:
        return 0.0
    return 2 * p * r / (p + r)


def test_bleu_identical_is_one():
    tokens = "do you live in the uk ?".split()
    assert bleu(tokens, tokens, 4) == 1.0
    assert bleu(tokens, tokens, 1) == 1.0


def test_bleu_disjoint_unigrams_zero():
    assert bleu("alpha beta".split(), "gamma delta".split(), 1) == 0.0
    assert bleu("alpha beta".split(), "gamma delta".split(), 4) == 0.0


def test_bleu_empty_candidate_zero():
    assert bleu([], "a b".split(), 4) == 0.0


def test_bleu_empty_reference_rejected():
    with pytest.raises(EmptyInputError):
        bleu("a".split(), [], 4)


def test_bleu_six_token_fixture_vs_oracle():
    candidate = "do you own a blue boat".split()
    reference = "do you own a red boat".split()
    for max_n in (1, 4):
        assert bleu(candidate, reference, max_n) == pytest.approx(
            oracle_bleu(candidate, reference, max_n), abs=1e-12
        )
    # hand check for max_n=1: 5 of 6 unigrams match, same length -> BP = 1
    assert bleu(candidate, reference, 1) == pytest.approx(5 / 6, abs=1e-12)


token_lists = st.lists(st.sampled_from("a b c d e".split()), min_size=0, max_size=12)
nonempty_token_lists = st.lists(st.sampled_from("a b c d e".split()), min_size=1, max_size=12)


@settings(max_examples=200, deadline=None)
@given(candidate=token_lists, reference=nonempty_token_lists, max_n=st.sampled_from([1, 4]))
def test_bleu_matches_oracle_and_is_bounded(candidate, reference, max_n):
    ours = bleu(candidate, reference, max_n)
    assert ours == pytest.approx(oracle_bleu(candidate, reference, max_n), abs=1e-9)
    assert 0.0 <= ours <= 1.0


@given(nonempty_token_lists)
def test_bleu_self_is_one(tokens):
    assert bleu(tokens, tokens, 4) == 1.0


# --- records and F1 ----------------------------------------------------------------


def record(uid, pred, gold, pred_q=None, gold_q=None, subset="seen"):
    return PredictionRecord(
        utterance_id=uid,
        predicted_decision=pred,
        predicted_question=pred_q,
        gold_decision=gold,
        gold_question=gold_q,
        subset=subset,
    )


def test_record_requires_gold_question_iff_inquire():
    with pytest.raises(ValidationError):
        record("u", Decision.YES, Decision.INQUIRE)  # missing gold question
    with pytest.raises(ValidationError):
        record("u", Decision.YES, Decision.YES, gold_q="spurious?")


def test_f1_bleu_perfect():
    records = [
        record("u1", Decision.YES, Decision.YES),
        record("u2", Decision.INQUIRE, Decision.INQUIRE,
               pred_q="Do you live here?", gold_q="Do you live here?"),
    ]
    result = f1_bleu(records, 4)
    assert result["f1"] == 1.0
    assert result["M"] == 1 and result["N"] == 1


def test_f1_bleu_degenerate_m_zero():
    records = [
        record("u1", Decision.YES, Decision.INQUIRE, gold_q="Do you?"),
        record("u2", Decision.NO, Decision.NO),
    ]
    result = f1_bleu(records, 4)
    assert result["f1"] == 0.0 and result["M"] == 0 and result["N"] == 1


def test_f1_bleu_degenerate_n_zero():
    records = [record("u1", Decision.INQUIRE, Decision.YES, pred_q="Do you?")]
    result = f1_bleu(records, 4)
    assert result["f1"] == 0.0 and result["M"] == 1 and result["N"] == 0


def test_f1_bleu_four_record_fixture_hand_applied():
    matched_1 = ("do you own a boat ?", "do you own a boat ?")
    matched_2 = ("do you live in glasgow ?", "do you live in the city ?")
    records = [
        record("u1", Decision.INQUIRE, Decision.INQUIRE,
               pred_q=matched_1[0], gold_q=matched_1[1]),
        record("u2", Decision.INQUIRE, Decision.INQUIRE,
               pred_q=matched_2[0], gold_q=matched_2[1]),
        record("u3", Decision.INQUIRE, Decision.YES, pred_q="do you work ?"),
        record("u4", Decision.NO, Decision.INQUIRE, gold_q="do you rent ?"),
    ]
    b1 = oracle_bleu(word_tokenize(matched_1[0]), word_tokenize(matched_1[1]), 4)
    b2 = oracle_bleu(word_tokenize(matched_2[0]), word_tokenize(matched_2[1]), 4)
    precision = (b1 + b2 + 0.0) / 3  # M = 3 model Inquire picks
    recall = (b1 + b2 + 0.0) / 3  # N = 3 gold Inquire items
    expected = 2 * precision * recall / (precision + recall)
    result = f1_bleu(records, 4)
    assert result["M"] == 3 and result["N"] == 3
    assert result["f1"] == pytest.approx(expected, abs=1e-12)
    assert result["f1"] == pytest.approx(oracle_f1_bleu(records, 4), abs=1e-12)


# --- decision metrics ----------------------------------------------------------------


def test_decision_metrics_all_correct():
    records = [record(f"u{i}", d, d, pred_q="q?" if d is Decision.INQUIRE else None,
                      gold_q="q?" if d is Decision.INQUIRE else None)
               for i, d in enumerate([Decision.YES, Decision.NO, Decision.INQUIRE])]
    metrics = decision_metrics(records)
    assert metrics["micro_acc"] == 100.0 and metrics["macro_acc"] == 100.0


def test_decision_metrics_hand_counted_fixture():
    gold = [Decision.YES, Decision.YES, Decision.NO, Decision.INQUIRE]
    pred = [Decision.YES, Decision.NO, Decision.NO, Decision.INQUIRE]
    records = [
        record(f"u{i}", p, g,
               pred_q="q?" if p is Decision.INQUIRE else None,
               gold_q="q?" if g is Decision.INQUIRE else None)
        for i, (p, g) in enumerate(zip(pred, gold))
    ]
    metrics = decision_metrics(records)
    assert metrics["micro_acc"] == pytest.approx(75.0)
    assert metrics["classwise"] == pytest.approx({"Yes": 50.0, "No": 100.0, "Inquire": 100.0})
    assert metrics["macro_acc"] == pytest.approx(83.33, abs=0.01)


def test_decision_metrics_empty_rejected():
    with pytest.raises(EmptyInputError):
        decision_metrics([])


def test_decision_metrics_absent_class_excluded_from_macro():
    records = [record("u1", Decision.YES, Decision.YES),
               record("u2", Decision.NO, Decision.NO)]
    metrics = decision_metrics(records)
    assert set(metrics["classwise"]) == {"Yes", "No"}
    assert metrics["macro_acc"] == 100.0


@given(st.permutations(list(range(8))))
def test_micro_invariant_to_order(order):
    rng = random.Random(3)
    base = []
    for i in range(8):
        gold = rng.choice(list(Decision))
        pred = rng.choice(list(Decision))
        base.append(record(
            f"u{i}", pred, gold,
            pred_q="q?" if pred is Decision.INQUIRE else None,
            gold_q="q?" if gold is Decision.INQUIRE else None,
        ))
    reordered = [base[i] for i in order]
    assert decision_metrics(reordered)["micro_acc"] == decision_metrics(base)["micro_acc"]


def test_macro_equals_mean_of_classwise():
    rng = random.Random(5)
    records = []
    for i in range(30):
        gold = rng.choice(list(Decision))
        pred = rng.choice(list(Decision))
        records.append(record(
            f"u{i}", pred, gold,
            pred_q="q?" if pred is Decision.INQUIRE else None,
            gold_q="q?" if gold is Decision.INQUIRE else None,
        ))
    metrics = decision_metrics(records)
    mean = sum(metrics["classwise"].values()) / len(metrics["classwise"])
    assert abs(metrics["macro_acc"] - mean) < 1e-9


# --- summarize -------------------------------------------------------------------------


def test_summarize_perfect_stub():
    records = []
    for i, subset in enumerate(["seen", "seen", "unseen"]):
        records.append(record(f"y{i}", Decision.YES, Decision.YES, subset=subset))
        records.append(record(
            f"q{i}", Decision.INQUIRE, Decision.INQUIRE,
            pred_q="do you own a boat ?", gold_q="do you own a boat ?", subset=subset,
        ))
    report = summarize(records)
    assert report.micro_acc == 100.0 and report.macro_acc == 100.0
    assert report.f1_bleu1 == 1.0 and report.f1_bleu4 == 1.0
    assert report.per_subset["seen"]["micro_acc"] == 100.0
    assert report.per_subset["unseen"]["micro_acc"] == 100.0


def test_missing_retrieval_entry_names_utterance(small_world):
    import torch

    from ocmr.evaluation import evaluate_split
    from ocmr.reader import ReaderConfig
    from ocmr.training import init_reader
    from ocmr.vocab import build_vocab, vocab_texts

    vocab = build_vocab(vocab_texts(small_world.kb, [small_world.train]))
    reader = init_reader(ReaderConfig(vocab_size=len(vocab), hidden_dim=16,
                                      num_encoder_layers=1, num_decoder_layers=1,
                                      num_heads=2, ffn_dim=32, dropout=0.0,
                                      inter_sentence_layers=0,
                                      inter_sentence_heads=2), 0)
    with pytest.raises(ValidationError, match=small_world.dev.instances[0].utterance_id):
        evaluate_split(reader, vocab, small_world.dev, small_world.kb, retrieval={})


def test_summarize_subset_decomposition():
    records = [
        record("u1", Decision.YES, Decision.YES, subset="seen"),
        record("u2", Decision.NO, Decision.YES, subset="seen"),
        record("u3", Decision.YES, Decision.YES, subset="unseen"),
        record("u4", Decision.NO, Decision.NO, subset="unseen"),
    ]
    report = summarize(records)
    seen_correct = report.per_subset["seen"]["micro_acc"] / 100 * 2
    unseen_correct = report.per_subset["unseen"]["micro_acc"] / 100 * 2
    overall_correct = report.micro_acc / 100 * 4
    assert seen_correct + unseen_correct == pytest.approx(overall_correct)
