"""Beam search over an arbitrary next-token scoring function.

The scorer is a callable mapping a batch of prefixes (lists of token ids, not
including BOS) to a tensor of next-token log-probabilities, one row per
prefix. Keeping the search generic makes it checkable against exhaustive
enumeration on toy distributions.

Scores are plain sums of stepwise log-probabilities (no length
normalization). A hypothesis finishes when it emits ``eos_id`` (the EOS
log-probability is included in its score) or reaches ``max_len``. Ties break
lexicographically on token ids so results are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import torch

StepFn = Callable[[Sequence[Sequence[int]]], torch.Tensor]


@dataclass
class Hypothesis:
    tokens: list[int]
    score: float
    ended: bool = True  # emitted EOS (False: stopped at the length cap)


def beam_search(
    step_fn: StepFn,
    eos_id: int,
    beam_size: int,
    max_len: int,
) -> list[Hypothesis]:
    """Return finished hypotheses, best first."""
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    beams: list[Hypothesis] = [Hypothesis(tokens=[], score=0.0)]
    finished: list[Hypothesis] = []

    for _ in range(max_len):
        if not beams:
            break
        log_probs = step_fn([hyp.tokens for hyp in beams])
        candidates: list[Hypothesis] = []
        for row, hyp in enumerate(beams):
            top = torch.topk(log_probs[row], min(beam_size, log_probs.shape[-1]))
            for token_score, token in zip(top.values.tolist(), top.indices.tolist()):
                candidates.append(
                    Hypothesis(tokens=hyp.tokens + [token], score=hyp.score + token_score)
                )
        candidates.sort(key=lambda h: (-h.score, h.tokens))
        beams = []
        for hyp in candidates:
            if len(beams) >= beam_size:
                break
            if hyp.tokens[-1] == eos_id:
                finished.append(Hypothesis(tokens=hyp.tokens[:-1], score=hyp.score, ended=True))
            else:
                beams.append(hyp)
        # adding tokens never raises a score (log-probs are <= 0), so once the
        # best finished hypothesis beats every open beam the top-1 is settled
        if not beams:
            break
        if finished and max(h.score for h in finished) >= beams[0].score:
            break

    for hyp in beams:  # length-capped hypotheses compete as-is
        finished.append(Hypothesis(tokens=hyp.tokens, score=hyp.score, ended=False))
    finished.sort(key=lambda h: (-h.score, h.tokens))
    return finished
