import math

import pytest
from hypothesis import given, strategies as st

from ocmr.corpus import DatasetSplit
from ocmr.errors import EmptyInputError, ValidationError
from ocmr.retrieval import (
    Query,
    RetrievalResult,
    build_tfidf_index,
    evaluate_retrieval,
    load_retrieval_cache,
    query_for,
    retrieve,
    retrieve_split,
    save_retrieval_cache,
)
from ocmr.text import content_tokenize

from conftest import make_instance, make_kb


# --- independent oracle: dense tf-idf cosine over dicts -------------------------


def oracle_scores(kb, query_text):
    docs = {d: content_tokenize(f"{doc.title} {doc.body}") for d, doc in kb.documents.items()}
    n = len(docs)
    df = {}
    for tokens in docs.values():
        for term in set(tokens):
            df[term] = df.get(term, 0) + 1
    idf = {term: math.log((1 + n) / (1 + term_df)) + 1.0 for term, term_df in df.items()}

    def vector(tokens):
        vec = {}
        for tok in tokens:
            if tok in idf:
                vec[tok] = vec.get(tok, 0.0) + idf[tok]
        return vec

    def cosine(u, v):
        nu = math.sqrt(sum(x * x for x in u.values()))
        nv = math.sqrt(sum(x * x for x in v.values()))
        if nu == 0 or nv == 0:
            return 0.0
        return sum(u[t] * v.get(t, 0.0) for t in u) / (nu * nv)

    q_vec = vector(content_tokenize(query_text))
    return {d: cosine(q_vec, vector(tokens)) for d, tokens in docs.items()}


def test_empty_kb_rejected():
    kb = make_kb({})
    with pytest.raises(EmptyInputError):
        build_tfidf_index(kb)


def test_one_doc_kb_returns_it():
    kb = make_kb({"only": "a lonely document"})
    index = build_tfidf_index(kb)
    result = retrieve(index, Query(text="anything at all"), 3)
    assert [doc_id for doc_id, _ in result.ranked] == ["only"]


def test_rebuild_is_deterministic(toy_kb):
    a = build_tfidf_index(toy_kb)
    b = build_tfidf_index(toy_kb)
    for query in ("over 65", "grant city", "boat"):
        assert retrieve(a, Query(text=query), 3).ranked == retrieve(b, Query(text=query), 3).ranked


DISJOINT = {
    "cats": "felines purr softly tonight",
    "dogs": "canines bark loudly outside",
    "fish": "guppies swim quietly below",
}


def test_disjoint_vocab_hand_computed():
    kb = make_kb(DISJOINT)
    index = build_tfidf_index(kb)
    result = retrieve(index, Query(text="felines purr"), 3)
    expected = oracle_scores(kb, "felines purr")
    assert result.ranked[0][0] == "cats"
    for doc_id, score in result.ranked:
        assert score == pytest.approx(expected[doc_id], abs=1e-12)
    # disjoint vocabularies: the other two docs score exactly zero
    assert result.ranked[1][1] == 0.0 and result.ranked[2][1] == 0.0


def test_self_retrieval_rank_one():
    kb = make_kb(DISJOINT)
    index = build_tfidf_index(kb)
    for doc_id, doc in kb.documents.items():
        result = retrieve(index, Query(text=f"{doc.title} {doc.body}"), 1)
        assert result.ranked[0][0] == doc_id


def test_k_larger_than_kb_clamps(toy_kb):
    index = build_tfidf_index(toy_kb)
    result = retrieve(index, Query(text="anything"), 50)
    assert len(result.ranked) == 3


def test_five_doc_ranking_matches_bruteforce():
    kb = make_kb(
        {
            "a": "grant for residents over 65",
            "b": "grant for disabled residents",
            "c": "boat licence for fishermen",
            "d": "city parking permit rules",
            "e": "residents parking near the city",
        }
    )
    index = build_tfidf_index(kb)
    for query in ("grant residents", "city parking", "boat", "over 65 disabled"):
        result = retrieve(index, Query(text=query), 5)
        expected = oracle_scores(kb, query)
        expected_order = sorted(expected.items(), key=lambda kv: (-kv[1], kv[0]))
        assert [doc_id for doc_id, _ in result.ranked] == [d for d, _ in expected_order]
        for doc_id, score in result.ranked:
            assert score == pytest.approx(expected[doc_id], abs=1e-12)


def test_query_must_be_nonempty():
    with pytest.raises(ValidationError):
        Query(text="   ")


def test_query_for_concatenates_question_and_scenario():
    inst = make_instance(question="Can I claim?", scenario="I am 70.")
    assert query_for(inst).text == "Can I claim? I am 70."


# --- evaluate_retrieval ----------------------------------------------------------


def _results_for(split, ranked_ids):
    return {
        inst.utterance_id: RetrievalResult(
            ranked=[(doc_id, 1.0 / (i + 1)) for i, doc_id in enumerate(ranked_ids)], k=20
        )
        for inst in split
    }


def test_topk_all_hits(toy_kb):
    split = DatasetSplit(name="dev", instances=[make_instance(uid=f"u{i}", gold="d1") for i in range(4)])
    table = evaluate_retrieval(_results_for(split, ["d1", "d2", "d3"]), split, toy_kb)
    assert all(v == 100.0 for v in table["overall"].values())


def test_topk_all_misses():
    kb = make_kb({f"d{i}": f"word{i} text" for i in range(25)})
    split = DatasetSplit(name="dev", instances=[make_instance(uid=f"u{i}", gold="d0") for i in range(4)])
    ranking_without_gold = [f"d{i}" for i in range(1, 21)]
    table = evaluate_retrieval(_results_for(split, ranking_without_gold), split, kb)
    assert all(v == 0.0 for v in table["overall"].values())


def test_topk_monotone_and_subset_decomposition(small_world):
    kb = small_world.kb
    index = build_tfidf_index(kb)
    results = retrieve_split(index, small_world.dev, k=20)
    table = evaluate_retrieval(results, small_world.dev, kb)
    ks = sorted(table["overall"])
    for lo, hi in zip(ks, ks[1:]):
        assert table["overall"][lo] <= table["overall"][hi]
    # overall = instance-weighted mean of subsets
    n_seen = sum(1 for i in small_world.dev if i.gold_doc_id in kb.seen_ids)
    n_unseen = len(small_world.dev) - n_seen
    for k in ks:
        seen_acc = table.get("seen", {}).get(k, 0.0)
        unseen_acc = table.get("unseen", {}).get(k, 0.0)
        weighted = (seen_acc * n_seen + unseen_acc * n_unseen) / len(small_world.dev)
        assert table["overall"][k] == pytest.approx(weighted)


def test_missing_result_is_error(toy_kb):
    split = DatasetSplit(name="dev", instances=[make_instance(uid="u1", gold="d1")])
    with pytest.raises(ValidationError, match="u1"):
        evaluate_retrieval({}, split, toy_kb)


def test_retrieval_cache_round_trip(tmp_path, toy_kb):
    split = DatasetSplit(name="dev", instances=[make_instance(uid="u1", gold="d1")])
    index = build_tfidf_index(toy_kb)
    results = retrieve_split(index, split, k=20)
    path = tmp_path / "cache.jsonl"
    save_retrieval_cache(results, path, config_hash="h1")
    loaded = load_retrieval_cache(path, expected_hash="h1")
    assert loaded["u1"].ranked == results["u1"].ranked

    from ocmr.errors import StaleCacheError

    with pytest.raises(StaleCacheError):
        load_retrieval_cache(path, expected_hash="h2")


@given(st.integers(min_value=1, max_value=10))
def test_result_size_clamped(k):
    kb = make_kb({f"d{i}": f"unique{i} words here" for i in range(4)})
    index = build_tfidf_index(kb)
    result = retrieve(index, Query(text="unique1 words"), k)
    assert len(result.ranked) == min(k, 4)
    scores = [s for _, s in result.ranked]
    assert scores == sorted(scores, reverse=True)
