"""Decision and question-generation metrics, and end-to-end evaluation.

BLEU here is sentence-level with uniform n-gram weights up to ``max_n``,
case-folded whitespace+punctuation tokenization, a brevity penalty, and
add-one smoothing for n >= 2 (a candidate with zero unigram matches scores
0). An empty candidate scores 0; identical non-empty sequences score 1.

F1_BLEU: precision is the mean BLEU over the M records the model predicted
Inquire for (scored against that record's gold question, 0 when the gold
decision is not Inquire); recall is the mean BLEU over the N gold-Inquire
records (0 when the model did not predict Inquire); F1 is their harmonic
mean, and 0 whenever M, N, or precision+recall is 0. M and N are reported
alongside the scores.

Decision accuracy: micro is total correct over total; class-wise is
per-gold-class accuracy; macro is the unweighted mean of the class-wise
values over classes present in the gold labels.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .corpus import (
    DatasetSplit,
    Decision,
    DialogueInstance,
    KnowledgeBase,
    decision_class,
    instance_subset,
)
from .entailment import EntailmentLabelSequence
from .errors import EmptyInputError, ValidationError
from .fusion import inference_candidates
from .reader import GenerationResult, Reader, build_input
from .retrieval import RetrievalResult
from .text import word_tokenize
from .training import LABEL_INDEX
from .vocab import Vocab


# --- BLEU ---------------------------------------------------------------------


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: list[str], reference: list[str], max_n: int = 4) -> float:
    """Sentence-level BLEU of a candidate token list against one reference."""
    if not reference:
        raise EmptyInputError("BLEU reference must be non-empty")
    if not candidate:
        return 0.0
    log_precision_sum = 0.0
    for n in range(1, max_n + 1):
        cand_counts = _ngram_counts(candidate, n)
        ref_counts = _ngram_counts(reference, n)
        matches = sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
        total = max(len(candidate) - n + 1, 0)
        if n == 1:
            if matches == 0:
                return 0.0
            precision = matches / total
        else:
            precision = (matches + 1) / (total + 1)
        log_precision_sum += math.log(precision) / max_n
    c, r = len(candidate), len(reference)
    brevity = 1.0 if c > r else math.exp(1.0 - r / c)
    return brevity * math.exp(log_precision_sum)


# --- prediction records --------------------------------------------------------


@dataclass
class PredictionRecord:
    utterance_id: str
    predicted_decision: Decision
    predicted_question: str | None
    gold_decision: Decision
    gold_question: str | None
    subset: str = "seen"

    def __post_init__(self):
        if (self.gold_question is not None) != (self.gold_decision is Decision.INQUIRE):
            raise ValidationError(
                f"{self.utterance_id}: gold_question must be present iff the gold "
                "decision is Inquire"
            )


def f1_bleu(records: list[PredictionRecord], max_n: int) -> dict:
    """F1 of BLEU-precision over model Inquire picks and BLEU-recall over gold
    Inquire items."""

    def item_bleu(record: PredictionRecord) -> float:
        if (
            record.predicted_decision is not Decision.INQUIRE
            or record.gold_decision is not Decision.INQUIRE
        ):
            return 0.0
        return bleu(
            word_tokenize(record.predicted_question or ""),
            word_tokenize(record.gold_question or ""),
            max_n,
        )

    predicted = [r for r in records if r.predicted_decision is Decision.INQUIRE]
    gold = [r for r in records if r.gold_decision is Decision.INQUIRE]
    m, n = len(predicted), len(gold)
    precision = sum(item_bleu(r) for r in predicted) / m if m else 0.0
    recall = sum(item_bleu(r) for r in gold) / n if n else 0.0
    if m == 0 or n == 0 or precision + recall == 0.0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return {"f1": f1, "precision": precision, "recall": recall, "M": m, "N": n}


def decision_metrics(records: list[PredictionRecord]) -> dict:
    """Micro/macro/class-wise decision accuracy, in percent."""
    if not records:
        raise EmptyInputError("cannot compute decision metrics over zero records")
    gold_counts: Counter = Counter()
    correct_counts: Counter = Counter()
    for record in records:
        gold_counts[record.gold_decision] += 1
        if record.predicted_decision == record.gold_decision:
            correct_counts[record.gold_decision] += 1
    micro = 100.0 * sum(correct_counts.values()) / len(records)
    classwise = {
        decision.value: 100.0 * correct_counts[decision] / gold_counts[decision]
        for decision in Decision
        if gold_counts[decision] > 0
    }
    macro = sum(classwise.values()) / len(classwise)
    return {"micro_acc": micro, "macro_acc": macro, "classwise": classwise}


# --- end-to-end evaluation ---------------------------------------------------------


@dataclass
class EvaluationReport:
    micro_acc: float
    macro_acc: float
    classwise: dict
    f1_bleu1: float
    f1_bleu4: float
    counts: dict
    per_subset: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "micro_acc": self.micro_acc,
            "macro_acc": self.macro_acc,
            "classwise": self.classwise,
            "f1_bleu1": self.f1_bleu1,
            "f1_bleu4": self.f1_bleu4,
            "counts": self.counts,
            "per_subset": self.per_subset,
            "metadata": self.metadata,
        }

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")


def summarize(records: list[PredictionRecord], metadata: dict | None = None) -> EvaluationReport:
    decisions = decision_metrics(records)
    b1 = f1_bleu(records, max_n=1)
    b4 = f1_bleu(records, max_n=4)
    per_subset = {}
    for subset in ("seen", "unseen"):
        subset_records = [r for r in records if r.subset == subset]
        if not subset_records:
            continue
        sub_dec = decision_metrics(subset_records)
        sub_b1 = f1_bleu(subset_records, max_n=1)
        sub_b4 = f1_bleu(subset_records, max_n=4)
        per_subset[subset] = {
            "micro_acc": sub_dec["micro_acc"],
            "macro_acc": sub_dec["macro_acc"],
            "classwise": sub_dec["classwise"],
            "f1_bleu1": sub_b1["f1"],
            "f1_bleu4": sub_b4["f1"],
            "counts": {"M": sub_b1["M"], "N": sub_b1["N"], "records": len(subset_records)},
        }
    meta = dict(metadata or {})
    meta.setdefault("subset_rule", "gold_doc_id membership in seen knowledge-base ids")
    return EvaluationReport(
        micro_acc=decisions["micro_acc"],
        macro_acc=decisions["macro_acc"],
        classwise=decisions["classwise"],
        f1_bleu1=b1["f1"],
        f1_bleu4=b4["f1"],
        counts={"M": b1["M"], "N": b1["N"], "records": len(records)},
        per_subset=per_subset,
        metadata=meta,
    )


def predict_instance(
    reader: Reader,
    vocab: Vocab,
    instance: DialogueInstance,
    kb: KnowledgeBase,
    retrieval: RetrievalResult,
    k: int = 5,
    beam_size: int = 5,
    max_len: int = 64,
) -> GenerationResult:
    """Inference path: top-k unshuffled retrieved candidates, no gold access."""
    sample = inference_candidates(retrieval, k=k)
    inputs = [
        build_input(kb[doc_id], instance, vocab, max_len=reader.config.max_input_len)
        for doc_id in sample.candidate_ids
    ]
    encoded = reader.encode_candidates(inputs)
    fused = reader.fuse(encoded, sample)
    return reader.generate(fused, vocab, beam_size=beam_size, max_len=max_len)


def predict_decisions(
    reader: Reader,
    vocab: Vocab,
    split: DatasetSplit,
    kb: KnowledgeBase,
    retrieval: dict[str, RetrievalResult],
    k: int = 5,
    beam_size: int = 1,
) -> dict[str, Decision]:
    """Decision classes only; used for checkpoint selection during training."""
    reader.eval()
    out = {}
    with torch.no_grad():
        for inst in split:
            result = retrieval.get(inst.utterance_id)
            if result is None:
                raise ValidationError(f"missing retrieval result for {inst.utterance_id}")
            generated = predict_instance(
                reader, vocab, inst, kb, result, k=k, beam_size=beam_size
            )
            out[inst.utterance_id] = generated.decision
    return out


def evaluate_split(
    reader: Reader,
    vocab: Vocab,
    split: DatasetSplit,
    kb: KnowledgeBase,
    retrieval: dict[str, RetrievalResult],
    k: int = 5,
    beam_size: int = 5,
    max_len: int = 64,
    metadata: dict | None = None,
) -> tuple[EvaluationReport, list[PredictionRecord]]:
    """Full evaluation of one split: decision metrics and F1_BLEU, overall and
    per seen/unseen subset."""
    reader.eval()
    records = []
    with torch.no_grad():
        for inst in split:
            result = retrieval.get(inst.utterance_id)
            if result is None:
                raise ValidationError(f"missing retrieval result for {inst.utterance_id}")
            generated = predict_instance(
                reader, vocab, inst, kb, result, k=k, beam_size=beam_size, max_len=max_len
            )
            gold_decision = decision_class(inst)
            records.append(
                PredictionRecord(
                    utterance_id=inst.utterance_id,
                    predicted_decision=generated.decision,
                    predicted_question=generated.follow_up,
                    gold_decision=gold_decision,
                    gold_question=(
                        inst.gold_answer if gold_decision is Decision.INQUIRE else None
                    ),
                    subset=instance_subset(inst, kb),
                )
            )
    return summarize(records, metadata), records


def entailment_probe_accuracy(
    reader: Reader,
    vocab: Vocab,
    split: DatasetSplit,
    kb: KnowledgeBase,
    truth: dict[str, EntailmentLabelSequence],
    subset: str | None = None,
) -> float:
    """Diagnostic only: fraction of gold-rule EDUs whose predicted entailment
    state matches ``truth``. Runs the entailment decoder on the gold candidate,
    outside the answer-generation path."""
    index_to_label = {v: k for k, v in LABEL_INDEX.items()}
    total = correct = 0
    reader.eval()
    with torch.no_grad():
        for inst in split:
            if subset is not None and instance_subset(inst, kb) != subset:
                continue
            true_seq = truth.get(inst.utterance_id)
            if true_seq is None:
                continue
            ci = build_input(
                kb[inst.gold_doc_id], inst, vocab,
                max_len=reader.config.max_input_len, is_gold=True,
            )
            encoded = reader.encode(ci)
            h_s, context, blocks = reader.entailment_inputs(ci, encoded.word_reps)
            logits = reader.entailment_forward(
                h_s, is_gold=True, context_reps=context, block_reps=blocks
            )
            predicted = [index_to_label[int(i)] for i in logits.argmax(dim=-1)]
            for pred, true in zip(predicted, true_seq.labels):
                total += 1
                correct += pred == true
    return correct / total if total else 0.0
