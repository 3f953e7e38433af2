"""Relevance-diversity candidate pools and per-step candidate sampling.

Each training instance gets a pool of the top-20 retrieved rule texts plus up
to 30 rule texts sampled at random from the seen knowledge base; the gold rule
is always a member. Every training step samples k candidates from the pool
(gold forced in by default) and shuffles their order so the decoder cannot
exploit rank position. The inference path is the exact opposite: the top-5
retrieved candidates, unshuffled, with no knowledge of the gold rule.

Randomness is reproducible: every draw uses a stream derived from
``(global_seed, utterance_id, epoch, step)`` via :func:`rng_for`.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass

from .corpus import DialogueInstance, KnowledgeBase
from .errors import ValidationError
from .retrieval import RetrievalResult


def rng_for(seed: int, *parts) -> random.Random:
    """Deterministic RNG stream keyed by seed and arbitrary string/int parts."""
    key = ":".join([str(seed), *map(str, parts)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


@dataclass(frozen=True)
class CandidatePool:
    utterance_id: str
    relevant_ids: tuple[str, ...]  # retrieval order
    random_ids: tuple[str, ...]
    gold_id: str

    @property
    def all_ids(self) -> tuple[str, ...]:
        ids = list(self.relevant_ids)
        if self.gold_id not in self.relevant_ids:
            ids.append(self.gold_id)
        ids.extend(did for did in self.random_ids if did not in ids)
        return tuple(ids)


@dataclass(frozen=True)
class FusionSample:
    candidate_ids: tuple[str, ...]
    gold_position: int | None
    shuffled: bool


def build_pool(
    instance: DialogueInstance,
    retrieval: RetrievalResult,
    kb: KnowledgeBase,
    rng: random.Random,
    top_relevant: int = 20,
    num_random: int = 30,
) -> CandidatePool:
    """Construct the candidate pool for one instance (once per epoch)."""
    if not kb.seen_ids:
        raise ValidationError("seen knowledge base is empty; cannot sample random candidates")
    relevant = tuple(doc_id for doc_id, _ in retrieval.ranked[:top_relevant])
    excluded = set(relevant) | {instance.gold_doc_id}
    candidates = sorted(kb.seen_ids - excluded)
    n_random = min(num_random, len(candidates))
    random_ids = tuple(rng.sample(candidates, n_random)) if n_random else ()
    return CandidatePool(
        utterance_id=instance.utterance_id,
        relevant_ids=relevant,
        random_ids=random_ids,
        gold_id=instance.gold_doc_id,
    )


def _unshuffled_order(pool: CandidatePool, chosen: list[str]) -> list[str]:
    """Retrieval-rank order with the gold rule at its rank, or in front when unranked."""
    rank = {doc_id: i for i, doc_id in enumerate(pool.relevant_ids)}

    def key(doc_id: str):
        if doc_id in rank:
            return (1, rank[doc_id])
        if doc_id == pool.gold_id:
            return (0, 0)
        return (2, pool.all_ids.index(doc_id))

    return sorted(chosen, key=key)


def sample_step(
    pool: CandidatePool,
    k: int,
    force_gold: bool,
    shuffle: bool,
    rng: random.Random,
) -> FusionSample:
    """Draw k distinct candidates for one training step."""
    ids = list(pool.all_ids)
    if k >= len(ids):
        chosen = ids
    elif force_gold:
        others = [doc_id for doc_id in ids if doc_id != pool.gold_id]
        chosen = [pool.gold_id] + rng.sample(others, k - 1)
        # restore pool order before (possibly) shuffling so the base order
        # never depends on the draw order
        chosen = [doc_id for doc_id in ids if doc_id in set(chosen)]
    else:
        picked = set(rng.sample(ids, k))
        chosen = [doc_id for doc_id in ids if doc_id in picked]

    if shuffle:
        rng.shuffle(chosen)
    else:
        chosen = _unshuffled_order(pool, chosen)

    gold_position = chosen.index(pool.gold_id) if pool.gold_id in chosen else None
    return FusionSample(candidate_ids=tuple(chosen), gold_position=gold_position, shuffled=shuffle)


def inference_candidates(retrieval: RetrievalResult, k: int = 5) -> FusionSample:
    """Top-k retrieved candidates in rank order; never shuffled, never gold-aware."""
    ids = tuple(doc_id for doc_id, _ in retrieval.ranked[:k])
    return FusionSample(candidate_ids=ids, gold_position=None, shuffled=False)
