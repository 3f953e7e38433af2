"""Sparse retrieval over the knowledge base, plus ranking evaluation and the
retrieval cache consumed by candidate fusion.

TF-IDF weighting, pinned so tests can recompute it by hand:
  tf(t, d)  = raw count of t in the document's "title body" token stream,
  idf(t)    = ln((1 + N) / (1 + df(t))) + 1          (N documents total),
  weight    = tf * idf, document vectors L2-normalized,
  score     = cosine similarity between query and document vectors.

Tokens are lowercased alphanumeric runs. Rankings tie-break by doc_id so they
are reproducible. The index is immutable after construction and safe for
concurrent queries.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .corpus import DatasetSplit, DialogueInstance, KnowledgeBase, instance_subset
from .errors import EmptyInputError, StaleCacheError, ValidationError
from .text import content_tokenize


@dataclass(frozen=True)
class Query:
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValidationError("query text must be non-empty")


@dataclass
class RetrievalResult:
    ranked: list[tuple[str, float]]
    k: int


def query_for(instance: DialogueInstance) -> Query:
    """Retrieval query: the user question concatenated with the scenario."""
    return Query(text=f"{instance.question} {instance.scenario}".strip())


class TfidfIndex:
    def __init__(self, kb: KnowledgeBase):
        if not kb.documents:
            raise EmptyInputError("cannot index an empty knowledge base")
        self.doc_ids = sorted(kb.documents)
        n_docs = len(self.doc_ids)
        counts = {
            doc_id: Counter(content_tokenize(f"{kb[doc_id].title} {kb[doc_id].body}"))
            for doc_id in self.doc_ids
        }
        df: Counter = Counter()
        for doc_counts in counts.values():
            df.update(doc_counts.keys())
        self.idf = {
            term: math.log((1 + n_docs) / (1 + term_df)) + 1.0 for term, term_df in df.items()
        }
        self.doc_vectors: dict[str, dict[str, float]] = {}
        for doc_id, doc_counts in counts.items():
            vec = {term: tf * self.idf[term] for term, tf in doc_counts.items()}
            norm = math.sqrt(sum(w * w for w in vec.values()))
            if norm > 0:
                vec = {term: w / norm for term, w in vec.items()}
            self.doc_vectors[doc_id] = vec

    def score(self, query_text: str) -> dict[str, float]:
        """Cosine score of every document against the query."""
        q_counts = Counter(content_tokenize(query_text))
        q_vec = {term: tf * self.idf.get(term, 0.0) for term, tf in q_counts.items()}
        norm = math.sqrt(sum(w * w for w in q_vec.values()))
        if norm > 0:
            q_vec = {term: w / norm for term, w in q_vec.items()}
        scores = {}
        for doc_id, d_vec in self.doc_vectors.items():
            scores[doc_id] = sum(w * d_vec.get(term, 0.0) for term, w in q_vec.items())
        return scores


def build_tfidf_index(kb: KnowledgeBase) -> TfidfIndex:
    return TfidfIndex(kb)


def rank_scores(scores: dict[str, float], k: int) -> RetrievalResult:
    ordered = sorted(scores.items(), key=lambda item: (-item[1], item[0]))
    return RetrievalResult(ranked=ordered[: min(k, len(ordered))], k=k)


def retrieve(index: TfidfIndex, query: Query, k: int) -> RetrievalResult:
    if k < 1:
        raise ValidationError("k must be >= 1")
    return rank_scores(index.score(query.text), k)


def retrieve_split(index: TfidfIndex, split: DatasetSplit, k: int = 20) -> dict[str, RetrievalResult]:
    return {
        inst.utterance_id: retrieve(index, query_for(inst), k) for inst in split
    }


def evaluate_retrieval(
    results: dict[str, RetrievalResult],
    split: DatasetSplit,
    kb: KnowledgeBase,
    ks: tuple[int, ...] = (1, 5, 10, 20),
) -> dict[str, dict[int, float]]:
    """Top-k accuracy (percent) overall and per seen/unseen subset."""
    max_k = max(ks)
    hits = {subset: Counter() for subset in ("overall", "seen", "unseen")}
    totals: Counter = Counter()
    for inst in split:
        result = results.get(inst.utterance_id)
        if result is None:
            raise ValidationError(f"missing retrieval result for {inst.utterance_id}")
        if len(result.ranked) < min(max_k, len(kb)):
            raise ValidationError(
                f"{inst.utterance_id}: result has {len(result.ranked)} ranks, "
                f"need at least {min(max_k, len(kb))}"
            )
        subset = instance_subset(inst, kb)
        totals["overall"] += 1
        totals[subset] += 1
        ranked_ids = [doc_id for doc_id, _ in result.ranked]
        for k in ks:
            if inst.gold_doc_id in ranked_ids[:k]:
                hits["overall"][k] += 1
                hits[subset][k] += 1
    table: dict[str, dict[int, float]] = {}
    for subset in ("overall", "seen", "unseen"):
        if totals[subset] == 0:
            continue
        table[subset] = {k: 100.0 * hits[subset][k] / totals[subset] for k in ks}
    return table


def save_retrieval_cache(results: dict[str, RetrievalResult], path, config_hash: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"config_hash": config_hash}) + "\n")
        for utterance_id in sorted(results):
            result = results[utterance_id]
            fh.write(
                json.dumps(
                    {
                        "utterance_id": utterance_id,
                        "k": result.k,
                        "ranked": [[doc_id, score] for doc_id, score in result.ranked],
                    },
                    sort_keys=True,
                )
                + "\n"
            )


def load_retrieval_cache(path, expected_hash: str | None = None) -> dict[str, RetrievalResult]:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if expected_hash is not None and header.get("config_hash") != expected_hash:
            raise StaleCacheError(
                f"{path}: retrieval cache was built under config hash "
                f"{header.get('config_hash')!r}, expected {expected_hash!r}"
            )
        out = {}
        for line in fh:
            record = json.loads(line)
            out[record["utterance_id"]] = RetrievalResult(
                ranked=[(doc_id, float(score)) for doc_id, score in record["ranked"]],
                k=record["k"],
            )
    return out
