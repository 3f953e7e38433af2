"""One-stage reader: shared encoder, entailment decoder, fused answer decoder.

Every candidate rule text is encoded independently together with the scenario,
question, and dialogue history. The encoder output at each ``[EDU]`` marker is
that unit's sentence-level representation; the full output sequence is the
word-level representation. The training-only entailment decoder (an
inter-sentence transformer plus a 3-way linear head) reads the gold
candidate's sentence-level rows; the answer decoder attends over the
row-concatenation of the sampled candidates' word-level rows and generates
either a decision word or a follow-up question.

Input template (marker tokens are dedicated vocabulary items)::

    [EDU] edu_1 [EDU] edu_2 ... [SCN] scenario [USR] question
    [HIS] q_1 [ANS] a_1 [HIS] q_2 [ANS] a_2 ...

When the sequence exceeds ``max_input_len``, EDU blocks are dropped last-first
before any dialogue fields are touched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .beam import Hypothesis, beam_search
from .corpus import Decision, DialogueInstance, RuleDocument, classify_answer
from .errors import ContractViolation, ValidationError
from .fusion import FusionSample
from .vocab import (
    ANSWER_MARKER,
    ANSWER_MARKER_ID,
    EDU_MARKER,
    HISTORY_MARKER,
    QUESTION_MARKER,
    SCENARIO_MARKER,
    Vocab,
)


@dataclass
class ReaderConfig:
    vocab_size: int
    hidden_dim: int = 128
    num_encoder_layers: int = 2
    num_decoder_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 256
    dropout: float = 0.1
    max_input_len: int = 96
    max_target_len: int = 64
    inter_sentence_layers: int = 1
    inter_sentence_heads: int = 8


@dataclass
class ContextualizedInput:
    candidate_id: str
    token_ids: list[int]
    edu_marker_positions: list[int]
    is_gold: bool
    # positions of the [SCN]/[USR]/[HIS]/[ANS] markers: the entailment decoder
    # interacts the EDU rows with these field rows
    field_marker_positions: list[int] = field(default_factory=list)


@dataclass
class EncodedCandidate:
    sentence_reps: torch.Tensor  # [num_edus, hidden]
    word_reps: torch.Tensor  # [seq_len, hidden]


@dataclass
class FusedRepresentation:
    word_reps: torch.Tensor  # [sum of seq lens, hidden]
    candidate_boundaries: list[tuple[int, int]] = field(default_factory=list)


@dataclass
class GenerationResult:
    text: str
    decision: Decision
    follow_up: str | None
    score: float  # sum of stepwise log-probabilities, EOS included when ended
    fallback: bool = False
    ended: bool = True  # False when the hypothesis hit max_len without EOS


def parse_decision(text: str) -> tuple[Decision, str | None]:
    decision = classify_answer(text)
    if decision is Decision.INQUIRE:
        return decision, text
    return decision, None


def build_input(
    candidate: RuleDocument,
    instance: DialogueInstance,
    vocab: Vocab,
    max_len: int = 96,
    is_gold: bool = False,
) -> ContextualizedInput:
    """Assemble the token sequence for one candidate of one instance."""
    if not candidate.edus:
        raise ValidationError(f"doc {candidate.doc_id!r} has no EDUs; segment the KB first")

    def ids(marker: str, text: str) -> list[int]:
        return [vocab.token_to_id[marker]] + vocab.encode(text)

    edu_blocks = [ids(EDU_MARKER, edu) for edu in candidate.edus]
    tail: list[int] = ids(SCENARIO_MARKER, instance.scenario)
    tail += ids(QUESTION_MARKER, instance.question)
    for turn in instance.history:
        tail += ids(HISTORY_MARKER, turn.follow_up_question)
        tail += ids(ANSWER_MARKER, turn.follow_up_answer)

    total = sum(len(b) for b in edu_blocks) + len(tail)
    while total > max_len and len(edu_blocks) > 1:
        total -= len(edu_blocks.pop())
    if total > max_len:  # a lone EDU block still too long: clip from the end
        overflow = total - max_len
        if overflow < len(tail):
            tail = tail[: len(tail) - overflow]
        else:
            overflow -= len(tail)
            tail = []
            edu_blocks[0] = edu_blocks[0][: len(edu_blocks[0]) - overflow]

    token_ids: list[int] = []
    marker_positions: list[int] = []
    for block in edu_blocks:
        marker_positions.append(len(token_ids))
        token_ids.extend(block)
    field_ids = {
        vocab.token_to_id[m]
        for m in (SCENARIO_MARKER, QUESTION_MARKER, HISTORY_MARKER, ANSWER_MARKER)
    }
    field_positions = [
        len(token_ids) + i for i, tok in enumerate(tail) if tok in field_ids
    ]
    token_ids.extend(tail)
    return ContextualizedInput(
        candidate_id=candidate.doc_id,
        token_ids=token_ids,
        edu_marker_positions=marker_positions,
        is_gold=is_gold,
        field_marker_positions=field_positions,
    )


class SinusoidalPositions(nn.Module):
    def __init__(self, hidden_dim: int, max_len: int = 2048):
        super().__init__()
        position = torch.arange(max_len).unsqueeze(1)
        div = torch.exp(torch.arange(0, hidden_dim, 2) * (-math.log(10000.0) / hidden_dim))
        table = torch.zeros(max_len, hidden_dim)
        table[:, 0::2] = torch.sin(position * div)
        table[:, 1::2] = torch.cos(position * div)
        self.register_buffer("table", table, persistent=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x + self.table[: x.shape[1]].to(x.dtype)


class EntailmentDecoder(nn.Module):
    """Inter-sentence transformer over sentence-level rows + 3-way linear head."""

    def __init__(self, hidden_dim: int, num_layers: int = 1, num_heads: int = 8,
                 ffn_dim: int | None = None, dropout: float = 0.1):
        super().__init__()
        if num_layers > 0:
            layer = nn.TransformerEncoderLayer(
                d_model=hidden_dim,
                nhead=num_heads,
                dim_feedforward=ffn_dim or 2 * hidden_dim,
                dropout=dropout,
                batch_first=True,
                norm_first=True,
            )
            self.transformer = nn.TransformerEncoder(
                layer, num_layers=num_layers, enable_nested_tensor=False
            )
        else:
            self.transformer = None
        self.head = nn.Linear(hidden_dim, 3)

    def forward(
        self,
        sentence_reps: torch.Tensor,
        context_reps: torch.Tensor | None = None,
        block_reps: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Logits [num_edus, 3], read at the EDU rows after interaction.

        ``block_reps`` (one pooled word-level row per EDU) are added to the
        EDU rows so each row carries its unit's content without relying on an
        attention hop; ``context_reps`` rows (question, scenario and
        dialogue-history representations) join the interaction but carry no
        logits of their own.
        """
        interacted = sentence_reps
        if self.transformer is not None:
            rows = sentence_reps
            if block_reps is not None and block_reps.shape == sentence_reps.shape:
                rows = rows + block_reps
            if context_reps is not None and context_reps.shape[0]:
                rows = torch.cat([rows, context_reps], dim=0)
            interacted = self.transformer(rows.unsqueeze(0)).squeeze(0)
            interacted = interacted[: sentence_reps.shape[0]]
        return self.head(interacted)


class Reader(nn.Module):
    def __init__(self, config: ReaderConfig):
        super().__init__()
        self.config = config
        d = config.hidden_dim
        self.embed = nn.Embedding(config.vocab_size, d, padding_idx=0)
        self.positions = SinusoidalPositions(d, max_len=max(config.max_input_len,
                                                            config.max_target_len) + 8)
        enc_layer = nn.TransformerEncoderLayer(
            d_model=d, nhead=config.num_heads, dim_feedforward=config.ffn_dim,
            dropout=config.dropout, batch_first=True, norm_first=True,
        )
        self.encoder = nn.TransformerEncoder(
            enc_layer, num_layers=config.num_encoder_layers, enable_nested_tensor=False
        )

        self.dec_embed = nn.Embedding(config.vocab_size, d, padding_idx=0)
        dec_layer = nn.TransformerDecoderLayer(
            d_model=d, nhead=config.num_heads, dim_feedforward=config.ffn_dim,
            dropout=config.dropout, batch_first=True, norm_first=True,
        )
        self.decoder = nn.TransformerDecoder(dec_layer, num_layers=config.num_decoder_layers)
        self.lm_head = nn.Linear(d, config.vocab_size)

        self.entailment_decoder = EntailmentDecoder(
            d,
            num_layers=config.inter_sentence_layers,
            num_heads=config.inter_sentence_heads,
            dropout=config.dropout,
        )

        self._generation_active = False
        self.entailment_call_count = 0

    # --- parameter groups -------------------------------------------------
    # The encoder parameters are shared by both decoding paths; the two
    # decoders own disjoint parameter sets.

    def encoder_parameters(self):
        return list(self.embed.parameters()) + list(self.encoder.parameters())

    def answer_parameters(self):
        return (
            list(self.dec_embed.parameters())
            + list(self.decoder.parameters())
            + list(self.lm_head.parameters())
        )

    def entailment_parameters(self):
        return list(self.entailment_decoder.parameters())

    # --- encoding ----------------------------------------------------------

    def encode_batch(self, token_ids: torch.Tensor, pad_mask: torch.Tensor) -> torch.Tensor:
        """token_ids [B, L], pad_mask True at padding -> word reps [B, L, hidden]."""
        if token_ids.shape[1] > self.config.max_input_len:
            raise ValidationError(
                f"sequence length {token_ids.shape[1]} exceeds the model maximum "
                f"{self.config.max_input_len}; truncation belongs in build_input"
            )
        x = self.positions(self.embed(token_ids))
        return self.encoder(x, src_key_padding_mask=pad_mask)

    def encode(self, ci: ContextualizedInput) -> EncodedCandidate:
        return self.encode_candidates([ci])[0]

    def encode_candidates(self, inputs: list[ContextualizedInput]) -> list[EncodedCandidate]:
        """Encode several candidates in one padded batch."""
        device = self.embed.weight.device
        longest = max(len(ci.token_ids) for ci in inputs)
        token_ids = torch.zeros(len(inputs), longest, dtype=torch.long, device=device)
        pad_mask = torch.ones(len(inputs), longest, dtype=torch.bool, device=device)
        for row, ci in enumerate(inputs):
            token_ids[row, : len(ci.token_ids)] = torch.tensor(ci.token_ids, device=device)
            pad_mask[row, : len(ci.token_ids)] = False
        word_reps = self.encode_batch(token_ids, pad_mask)
        out = []
        for row, ci in enumerate(inputs):
            reps = word_reps[row, : len(ci.token_ids)]
            markers = torch.tensor(ci.edu_marker_positions, dtype=torch.long, device=device)
            out.append(EncodedCandidate(sentence_reps=reps[markers], word_reps=reps))
        return out

    # --- duplex decoding ----------------------------------------------------

    def entailment_forward(
        self,
        sentence_reps: torch.Tensor,
        is_gold: bool,
        context_reps: torch.Tensor | None = None,
        block_reps: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Logits [num_edus, 3] for the gold candidate. Training-path only."""
        if self._generation_active:
            raise ContractViolation("entailment decoding is not part of the inference path")
        if not is_gold:
            raise ContractViolation("entailment reasoning activates only for the gold rule text")
        self.entailment_call_count += 1
        return self.entailment_decoder(sentence_reps, context_reps, block_reps)

    def entailment_inputs(
        self, ci: ContextualizedInput, word_reps: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor | None, torch.Tensor | None]:
        """Assemble the entailment decoder's inputs from one candidate's
        word-level representations: marker rows, one mean-pooled context row
        per dialogue field (scenario, question, each history turn with its
        answer), and one mean-pooled block row per EDU."""
        device = word_reps.device
        markers = torch.tensor(ci.edu_marker_positions, dtype=torch.long, device=device)
        h_s = word_reps[markers]

        answer_id = ANSWER_MARKER_ID
        context = None
        if ci.field_marker_positions:
            # a span runs from one field marker to the next; an [ANS] span is
            # folded into its turn's row so question and answer share a row
            starts = []
            for position in ci.field_marker_positions:
                if ci.token_ids[position] == answer_id and starts:
                    continue
                starts.append(position)
            bounds = starts + [len(ci.token_ids)]
            context = torch.stack([
                word_reps[start:end].mean(dim=0)
                for start, end in zip(bounds, bounds[1:])
            ])

        blocks_end = (
            ci.field_marker_positions[0]
            if ci.field_marker_positions
            else len(ci.token_ids)
        )
        spans = list(ci.edu_marker_positions) + [blocks_end]
        block_rows = [
            word_reps[start:end].mean(dim=0) for start, end in zip(spans, spans[1:])
        ]
        block_reps = torch.stack(block_rows) if block_rows else None
        return h_s, context, block_reps

    def fuse(self, encoded: list[EncodedCandidate], order: FusionSample) -> FusedRepresentation:
        if len(encoded) != len(order.candidate_ids):
            raise ValidationError(
                f"{len(encoded)} encoded candidates for {len(order.candidate_ids)} sampled ids"
            )
        dims = {e.word_reps.shape[-1] for e in encoded}
        if len(dims) > 1:
            raise ValidationError(f"hidden dim mismatch across candidates: {sorted(dims)}")
        boundaries = []
        offset = 0
        for enc in encoded:
            boundaries.append((offset, offset + enc.word_reps.shape[0]))
            offset += enc.word_reps.shape[0]
        return FusedRepresentation(
            word_reps=torch.cat([e.word_reps for e in encoded], dim=0),
            candidate_boundaries=boundaries,
        )

    def decode_logits(
        self,
        memory: torch.Tensor,
        target_ids: torch.Tensor,
        memory_pad_mask: torch.Tensor | None = None,
        bos_id: int = 1,
        target_pad_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """Teacher-forced logits [B, T, V] aligned with target_ids [B, T]."""
        batch, t_len = target_ids.shape
        if t_len > self.config.max_target_len:
            raise ValidationError(
                f"target length {t_len} exceeds the model maximum "
                f"{self.config.max_target_len}"
            )
        bos = torch.full((batch, 1), bos_id, dtype=torch.long, device=target_ids.device)
        dec_input = torch.cat([bos, target_ids[:, :-1]], dim=1)
        x = self.positions(self.dec_embed(dec_input))
        causal = torch.triu(
            torch.ones(t_len, t_len, dtype=torch.bool, device=x.device), diagonal=1
        )
        hidden = self.decoder(
            x,
            memory,
            tgt_mask=causal,
            tgt_key_padding_mask=target_pad_mask,
            memory_key_padding_mask=memory_pad_mask,
        )
        return self.lm_head(hidden)

    # --- generation -----------------------------------------------------------

    def generate(
        self,
        fused: FusedRepresentation,
        vocab: Vocab,
        beam_size: int = 5,
        max_len: int = 64,
    ) -> GenerationResult:
        """Beam-search decode conditioned on the fused representation."""
        max_len = min(max_len, self.config.max_target_len - 1)
        self._generation_active = True
        try:
            with torch.no_grad():
                memory = fused.word_reps.unsqueeze(0)

                def step_fn(prefixes):
                    width = len(prefixes)
                    longest = max(len(p) for p in prefixes)
                    target = torch.full(
                        (width, longest + 1), vocab.pad_id, dtype=torch.long,
                        device=memory.device,
                    )
                    for row, prefix in enumerate(prefixes):
                        if prefix:
                            target[row, : len(prefix)] = torch.tensor(prefix, device=memory.device)
                    logits = self.decode_logits(
                        memory.expand(width, -1, -1), target, bos_id=vocab.bos_id
                    )
                    last = logits[torch.arange(width), [len(p) for p in prefixes]]
                    return torch.log_softmax(last, dim=-1)

                hypotheses = beam_search(step_fn, vocab.eos_id, beam_size, max_len)
                best = hypotheses[0]
                fallback = False
                if not best.tokens:
                    # degenerate empty output: fall back to the more probable
                    # decision word
                    scores = {}
                    for word in ("yes", "no"):
                        seq = vocab.encode(word) + [vocab.eos_id]
                        scores[word] = self.sequence_score(fused, seq, vocab)
                    word = max(scores, key=lambda w: (scores[w], w))
                    best = Hypothesis(tokens=vocab.encode(word), score=scores[word])
                    fallback = True
        finally:
            self._generation_active = False

        text = " ".join(vocab.decode(best.tokens))
        decision, follow_up = parse_decision(text)
        return GenerationResult(
            text=text,
            decision=decision,
            follow_up=follow_up,
            score=best.score,
            fallback=fallback,
            ended=best.ended,
        )

    def sequence_score(self, fused: FusedRepresentation, token_ids: list[int], vocab: Vocab) -> float:
        """Sum of stepwise log-probabilities of ``token_ids`` (teacher-forced)."""
        with torch.no_grad():
            memory = fused.word_reps.unsqueeze(0)
            target = torch.tensor([token_ids], dtype=torch.long, device=memory.device)
            logits = self.decode_logits(memory, target, bos_id=vocab.bos_id)
            log_probs = torch.log_softmax(logits[0], dim=-1)
            return float(log_probs[torch.arange(len(token_ids)), token_ids].sum())
