"""Joint optimization of fused answer generation and entailment reasoning.

The per-step loss is ``l_total = l_answer + lambda * l_entail`` where
``l_answer`` is the teacher-forced negative log-likelihood of the target
tokens (summed over tokens, averaged over the batch) and ``l_entail`` is the
mean three-way cross-entropy over the gold candidate's EDUs (averaged over the
batch items whose step sample contains the gold rule). Entailment supervision
is skipped entirely when disabled or when lambda is zero, so the entailment
decoder receives no gradient at all in those runs.

Optimization uses AdamW with two learning-rate groups: the entailment decoder
at ``lr_entailment_decoder`` and everything else (the shared encoder plus the
answer decoder) at ``lr_backbone``.
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch
from torch import nn

from .corpus import DatasetSplit, DialogueInstance, KnowledgeBase, decision_class
from .entailment import EntailmentLabel, EntailmentLabelSequence
from .errors import ConfigError, OcmrError, ValidationError
from .fusion import CandidatePool, FusionSample, build_pool, inference_candidates, rng_for, sample_step
from .reader import ContextualizedInput, Reader, ReaderConfig, build_input
from .retrieval import RetrievalResult
from .vocab import Vocab

logger = logging.getLogger(__name__)

LABEL_INDEX = {
    EntailmentLabel.ENTAILMENT: 0,
    EntailmentLabel.CONTRADICTION: 1,
    EntailmentLabel.NEUTRAL: 2,
}


@dataclass
class TrainingConfig:
    lambda_entail: float = 0.9
    lr_backbone: float = 2e-4
    lr_entailment_decoder: float = 2e-5
    batch_size: int = 8
    grad_accum: int = 1  # micro-batches per optimizer step, for small memory
    max_steps: int = 2000
    num_epochs: int = 50
    weight_decay: float = 0.01
    max_grad_norm: float = 1.0
    lr_schedule: str = "constant"  # or "linear": 5% warmup then decay to zero
    seed: int = 13
    eval_every: int = 250
    patience: int = 3
    eval_beam_size: int = 1
    fusion_k: int = 5
    top_relevant: int = 20
    num_random: int = 30
    force_gold: bool = True
    # ablation flags (all on = full model)
    use_rd_pool: bool = True
    use_entailment_loss: bool = True
    use_shuffle: bool = True
    use_fusion: bool = True

    def __post_init__(self):
        if not 0.0 <= self.lambda_entail <= 1.0:
            raise ConfigError("lambda_entail must be in [0, 1]")
        if self.lr_backbone <= 0 or self.lr_entailment_decoder <= 0:
            raise ConfigError("learning rates must be positive")
        if self.lr_schedule not in ("constant", "linear"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")

    def lr_factor(self, step: int) -> float:
        """Multiplier applied to both group learning rates at ``step`` (0-based)."""
        if self.lr_schedule == "constant" or self.max_steps <= 0:
            return 1.0
        warmup = max(int(0.05 * self.max_steps), 1)
        if step < warmup:
            return (step + 1) / warmup
        span = max(self.max_steps - warmup, 1)
        return max(0.05, (self.max_steps - step) / span)


@dataclass
class LossBreakdown:
    l_answer: float
    l_entail: float
    l_total: float


@dataclass
class TrainItem:
    """One instance prepared for one training step."""

    instance: DialogueInstance
    sample: FusionSample
    inputs: list[ContextualizedInput]
    target_ids: list[int]
    labels: EntailmentLabelSequence | None


# --- losses -----------------------------------------------------------------


def answer_loss(logits: torch.Tensor, target_ids: torch.Tensor) -> torch.Tensor:
    """NLL of one target sequence, summed over tokens. logits [T, V], targets [T]."""
    log_probs = torch.log_softmax(logits, dim=-1)
    return -log_probs[torch.arange(target_ids.shape[0]), target_ids].sum()


def entailment_loss(logits: torch.Tensor, labels: EntailmentLabelSequence) -> torch.Tensor:
    """Mean three-way cross-entropy over EDUs. logits [n, 3]."""
    if logits.shape[0] != len(labels.labels):
        raise ValidationError(
            f"{logits.shape[0]} logit rows vs {len(labels.labels)} labels for {labels.doc_id}"
        )
    target = torch.tensor(
        [LABEL_INDEX[label] for label in labels.labels], dtype=torch.long,
        device=logits.device,
    )
    return nn.functional.cross_entropy(logits, target)


def combined_loss(l_answer, l_entail, lambda_entail: float):
    return l_answer + lambda_entail * l_entail


# --- batched forward ---------------------------------------------------------


def forward_batch(
    reader: Reader,
    items: list[TrainItem],
    vocab: Vocab,
    config: TrainingConfig,
):
    """Forward both decoders over a batch; returns (loss tensor, LossBreakdown)."""
    device = reader.embed.weight.device
    dtype = reader.embed.weight.dtype

    flat_inputs = [ci for item in items for ci in item.inputs]
    enc_len = max(len(ci.token_ids) for ci in flat_inputs)
    n_seq = len(flat_inputs)
    token_ids = torch.full((n_seq, enc_len), vocab.pad_id, dtype=torch.long, device=device)
    pad_mask = torch.ones(n_seq, enc_len, dtype=torch.bool, device=device)
    for row, ci in enumerate(flat_inputs):
        token_ids[row, : len(ci.token_ids)] = torch.tensor(ci.token_ids, device=device)
        pad_mask[row, : len(ci.token_ids)] = False
    word_reps = reader.encode_batch(token_ids, pad_mask)

    # fused memory per item, padded across the batch
    mem_lens = []
    row = 0
    item_rows: list[list[int]] = []
    for item in items:
        rows = list(range(row, row + len(item.inputs)))
        item_rows.append(rows)
        mem_lens.append(sum(len(item.inputs[i - row].token_ids) for i in rows))
        row += len(item.inputs)
    mem_max = max(mem_lens)
    memory = torch.zeros(len(items), mem_max, word_reps.shape[-1], device=device, dtype=dtype)
    memory_mask = torch.ones(len(items), mem_max, dtype=torch.bool, device=device)
    for b, (item, rows) in enumerate(zip(items, item_rows)):
        offset = 0
        for local, r in enumerate(rows):
            length = len(item.inputs[local].token_ids)
            memory[b, offset : offset + length] = word_reps[r, :length]
            offset += length
        memory_mask[b, :offset] = False

    t_max = max(len(item.target_ids) for item in items)
    targets = torch.full((len(items), t_max), vocab.pad_id, dtype=torch.long, device=device)
    target_mask = torch.ones(len(items), t_max, dtype=torch.bool, device=device)
    for b, item in enumerate(items):
        targets[b, : len(item.target_ids)] = torch.tensor(item.target_ids, device=device)
        target_mask[b, : len(item.target_ids)] = False

    logits = reader.decode_logits(
        memory,
        targets,
        memory_pad_mask=memory_mask,
        bos_id=vocab.bos_id,
        target_pad_mask=target_mask,
    )
    log_probs = torch.log_softmax(logits, dim=-1)
    token_nll = -log_probs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    token_nll = token_nll.masked_fill(target_mask, 0.0)
    l_answer = token_nll.sum(dim=1).mean()

    entail_terms = []
    supervise = config.use_entailment_loss and config.lambda_entail > 0.0
    if supervise:
        for item, rows in zip(items, item_rows):
            if item.labels is None or item.sample.gold_position is None:
                continue
            local = item.sample.gold_position
            ci = item.inputs[local]
            gold_reps = word_reps[rows[local], : len(ci.token_ids)]
            h_s, context, blocks = reader.entailment_inputs(ci, gold_reps)
            logits3 = reader.entailment_forward(
                h_s, is_gold=ci.is_gold, context_reps=context, block_reps=blocks
            )
            labels = item.labels
            if len(labels.labels) > len(ci.edu_marker_positions):
                # EDU blocks dropped by input truncation: align to the kept prefix
                labels = EntailmentLabelSequence(
                    doc_id=labels.doc_id,
                    labels=labels.labels[: len(ci.edu_marker_positions)],
                )
            entail_terms.append(entailment_loss(logits3, labels))
    if entail_terms:
        l_entail = torch.stack(entail_terms).mean()
    else:
        l_entail = torch.zeros((), device=device, dtype=l_answer.dtype)

    total = combined_loss(l_answer, l_entail, config.lambda_entail if supervise else 0.0)
    breakdown = LossBreakdown(
        l_answer=float(l_answer.detach()),
        l_entail=float(l_entail.detach()),
        l_total=float(l_answer.detach())
        + (config.lambda_entail if supervise else 0.0) * float(l_entail.detach()),
    )
    return total, breakdown


# --- optimizer and stepping ----------------------------------------------------


def make_optimizer(reader: Reader, config: TrainingConfig) -> torch.optim.AdamW:
    groups = [
        {
            "params": reader.encoder_parameters() + reader.answer_parameters(),
            "lr": config.lr_backbone,
        },
        {
            "params": reader.entailment_parameters(),
            "lr": config.lr_entailment_decoder,
        },
    ]
    return torch.optim.AdamW(groups, weight_decay=config.weight_decay)


def train_step(
    reader: Reader,
    optimizer: torch.optim.Optimizer,
    items: list[TrainItem],
    vocab: Vocab,
    config: TrainingConfig,
) -> LossBreakdown:
    """One optimization step over one batch, with optional gradient
    accumulation over ``grad_accum`` equal micro-batches."""
    reader.train()
    optimizer.zero_grad(set_to_none=True)
    accum = max(1, min(config.grad_accum, len(items)))
    chunk = (len(items) + accum - 1) // accum
    micro_batches = [items[i : i + chunk] for i in range(0, len(items), chunk)]
    parts: list[tuple[int, LossBreakdown]] = []
    for micro in micro_batches:
        total, breakdown = forward_batch(reader, micro, vocab, config)
        (total * (len(micro) / len(items))).backward()
        parts.append((len(micro), breakdown))

    weight = sum(n for n, _ in parts)
    l_answer = sum(n * b.l_answer for n, b in parts) / weight
    l_entail = sum(n * b.l_entail for n, b in parts) / weight
    lambda_eff = config.lambda_entail if (
        config.use_entailment_loss and config.lambda_entail > 0.0
    ) else 0.0
    breakdown = LossBreakdown(
        l_answer=l_answer, l_entail=l_entail, l_total=l_answer + lambda_eff * l_entail
    )
    if not math.isfinite(breakdown.l_total):
        raise OcmrError(
            f"non-finite loss: answer={breakdown.l_answer} entail={breakdown.l_entail} "
            f"(batch of {len(items)}, first utterance "
            f"{items[0].instance.utterance_id!r})"
        )
    if config.max_grad_norm:
        params = [p for group in optimizer.param_groups for p in group["params"]]
        torch.nn.utils.clip_grad_norm_(params, config.max_grad_norm)
    optimizer.step()
    return breakdown


# --- item preparation ------------------------------------------------------------


def make_pools(
    split: DatasetSplit,
    kb: KnowledgeBase,
    retrieval: dict[str, RetrievalResult],
    config: TrainingConfig,
    epoch: int,
) -> dict[str, CandidatePool]:
    """Per-epoch candidate pools. With the RD pool disabled (ablation) only the
    top-k retrieved candidates are kept."""
    pools = {}
    for inst in split:
        result = retrieval.get(inst.utterance_id)
        if result is None:
            raise ValidationError(f"missing retrieval result for {inst.utterance_id}")
        rng = rng_for(config.seed, "pool", inst.utterance_id, epoch)
        if config.use_rd_pool:
            pools[inst.utterance_id] = build_pool(
                inst, result, kb, rng,
                top_relevant=config.top_relevant, num_random=config.num_random,
            )
        else:
            pools[inst.utterance_id] = build_pool(
                inst, result, kb, rng, top_relevant=config.fusion_k, num_random=0,
            )
    return pools


def prepare_item(
    instance: DialogueInstance,
    kb: KnowledgeBase,
    pool: CandidatePool,
    retrieval: RetrievalResult,
    vocab: Vocab,
    labels: dict[str, EntailmentLabelSequence],
    config: TrainingConfig,
    reader_config: ReaderConfig,
    epoch: int,
    step: int,
) -> TrainItem:
    if config.use_fusion:
        rng = rng_for(config.seed, "sample", instance.utterance_id, epoch, step)
        sample = sample_step(
            pool, config.fusion_k, config.force_gold, config.use_shuffle, rng
        )
    else:
        # top-1 only: the single best retrieved candidate, no gold forcing
        sample = inference_candidates(retrieval, k=1)
        if sample.candidate_ids and sample.candidate_ids[0] == instance.gold_doc_id:
            sample = FusionSample(
                candidate_ids=sample.candidate_ids, gold_position=0, shuffled=False
            )
    inputs = [
        build_input(
            kb[doc_id], instance, vocab,
            max_len=reader_config.max_input_len,
            is_gold=doc_id == instance.gold_doc_id,
        )
        for doc_id in sample.candidate_ids
    ]
    target_ids = vocab.encode(instance.gold_answer)[: reader_config.max_target_len - 1]
    target_ids.append(vocab.eos_id)
    item_labels = None
    if sample.gold_position is not None:
        item_labels = labels.get(instance.utterance_id)
    return TrainItem(
        instance=instance,
        sample=sample,
        inputs=inputs,
        target_ids=target_ids,
        labels=item_labels,
    )


# --- checkpointing -----------------------------------------------------------------


def save_checkpoint(path, reader: Reader, vocab: Vocab, metadata: dict | None = None) -> None:
    """Atomic write: serialize to a temp file, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "model_config": asdict(reader.config),
        "state_dict": reader.state_dict(),
        "vocab_tokens": vocab.tokens,
        "metadata": metadata or {},
    }
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(payload, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> tuple[Reader, Vocab, dict]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    config = ReaderConfig(**payload["model_config"])
    reader = Reader(config)
    reader.load_state_dict(payload["state_dict"])
    reader.eval()
    vocab = Vocab(tokens=payload["vocab_tokens"])
    return reader, vocab, payload.get("metadata", {})


def init_reader(config: ReaderConfig, seed: int) -> Reader:
    torch.manual_seed(seed)
    return Reader(config)


# --- training loop -----------------------------------------------------------------


@dataclass
class TrainOutcome:
    checkpoint_path: Path
    history: list[dict] = field(default_factory=list)
    best_dev_micro: float = 0.0
    steps: int = 0


def train(
    reader: Reader,
    vocab: Vocab,
    train_split: DatasetSplit,
    dev_split: DatasetSplit | None,
    kb: KnowledgeBase,
    retrieval_train: dict[str, RetrievalResult],
    retrieval_dev: dict[str, RetrievalResult] | None,
    labels: dict[str, EntailmentLabelSequence],
    config: TrainingConfig,
    run_dir,
    log_name: str = "training_log.jsonl",
    checkpoint_metadata: dict | None = None,
) -> TrainOutcome:
    """Run epochs of train_step with per-epoch pool refresh; keep the best
    dev-Micro-Acc checkpoint; stop early after ``patience`` non-improving
    evaluations or at ``max_steps``."""
    from .evaluation import predict_decisions  # local import to avoid a cycle

    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    checkpoint_path = run_dir / "reader_checkpoint.pt"
    log_path = run_dir / log_name

    optimizer = make_optimizer(reader, config)
    history: list[dict] = []
    best_micro = -1.0
    evals_since_best = 0
    step = 0
    stop = False
    base_metadata = dict(checkpoint_metadata or {})

    def checkpoint_meta(**extra) -> dict:
        return {**base_metadata, **extra}

    def evaluate_dev() -> float:
        if dev_split is None or retrieval_dev is None or not len(dev_split):
            return 0.0
        reader.eval()
        correct = 0
        decisions = predict_decisions(
            reader, vocab, dev_split, kb, retrieval_dev,
            k=config.fusion_k if config.use_fusion else 1,
            beam_size=config.eval_beam_size,
        )
        for inst in dev_split:
            if decisions[inst.utterance_id] == decision_class(inst):
                correct += 1
        return 100.0 * correct / len(dev_split)

    save_checkpoint(checkpoint_path, reader, vocab, checkpoint_meta(step=0, dev_micro=0.0))
    if config.max_steps == 0:
        return TrainOutcome(checkpoint_path=checkpoint_path, history=[], best_dev_micro=0.0, steps=0)

    with log_path.open("w", encoding="utf-8") as log_fh:
        for epoch in range(config.num_epochs):
            if stop:
                break
            pools = make_pools(train_split, kb, retrieval_train, config, epoch)
            order = list(train_split.instances)
            rng_for(config.seed, "order", epoch).shuffle(order)
            for start in range(0, len(order), config.batch_size):
                batch_instances = order[start : start + config.batch_size]
                items = [
                    prepare_item(
                        inst, kb, pools[inst.utterance_id],
                        retrieval_train[inst.utterance_id],
                        vocab, labels, config, reader.config, epoch, step,
                    )
                    for inst in batch_instances
                ]
                factor = config.lr_factor(step)
                optimizer.param_groups[0]["lr"] = config.lr_backbone * factor
                optimizer.param_groups[1]["lr"] = config.lr_entailment_decoder * factor
                breakdown = train_step(reader, optimizer, items, vocab, config)
                step += 1
                record = {
                    "step": step,
                    "epoch": epoch,
                    "l_answer": breakdown.l_answer,
                    "l_entail": breakdown.l_entail,
                    "l_total": breakdown.l_total,
                    "lr_backbone": optimizer.param_groups[0]["lr"],
                    "lr_entailment_decoder": optimizer.param_groups[1]["lr"],
                }
                history.append(record)
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")

                if step % config.eval_every == 0 or step >= config.max_steps:
                    micro = evaluate_dev()
                    logger.info("step %d dev micro-acc %.2f", step, micro)
                    if micro > best_micro:
                        best_micro = micro
                        evals_since_best = 0
                        save_checkpoint(
                            checkpoint_path, reader, vocab,
                            checkpoint_meta(step=step, dev_micro=micro),
                        )
                    else:
                        evals_since_best += 1
                    if step >= config.max_steps or evals_since_best >= config.patience:
                        stop = True
                if stop:
                    break

    if best_micro < 0:  # no evaluation ever ran: keep the final parameters
        best_micro = 0.0
        save_checkpoint(checkpoint_path, reader, vocab, checkpoint_meta(step=step, dev_micro=None))
    return TrainOutcome(
        checkpoint_path=checkpoint_path,
        history=history,
        best_dev_micro=best_micro,
        steps=step,
    )
