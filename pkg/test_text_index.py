"""
倒排索引、语言模型打分与BM25测试
"""

import math

import pytest

from table_generator.text_index import (
    InvertedIndex,
    bm25_rank_tables,
    retrieve_candidate_entities,
    table_relevance,
)

DOCS = {
    "d1": ["a", "b", "a", "c"],
    "d2": ["b", "d"],
    "d3": ["c", "c", "c", "e", "f"],
}


def lm_oracle(query, doc_id, mu):
    """逐项计算 Dirichlet 平滑公式"""
    collection = [t for tokens in DOCS.values() for t in tokens]
    doc = DOCS[doc_id]
    total = 0.0
    for term in query:
        ctf = collection.count(term)
        if ctf == 0:
            continue
        total += math.log((doc.count(term) + mu * ctf / len(collection)) / (len(doc) + mu))
    return total


def bm25_oracle(query, doc_id, k1=1.2, b=0.75):
    n = len(DOCS)
    avgdl = sum(len(d) for d in DOCS.values()) / n
    doc = DOCS[doc_id]
    total = 0.0
    for term in set(query):
        df = sum(1 for d in DOCS.values() if term in d)
        if df == 0 or term not in doc:
            continue
        idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
        tf = doc.count(term)
        total += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(doc) / avgdl))
    return total


def test_index_invariants():
    index = InvertedIndex.build(DOCS)
    assert sum(index.doc_lengths.values()) == index.collection_length == 11
    for term, plist in index.postings.items():
        assert sum(tf for _, tf in plist) == index.collection_tf[term]
    assert index.tf("a", "d1") == 2
    assert index.df("c") == 2
    assert "d2" in index and len(index) == 3


@pytest.mark.parametrize("doc_id", ["d1", "d2", "d3"])
def test_lm_score_matches_formula(doc_id):
    index = InvertedIndex.build(DOCS)
    query = ["a", "b"]
    assert index.lm_score(query, doc_id, 2000.0) == pytest.approx(lm_oracle(query, doc_id, 2000.0), rel=1e-12)
    assert index.lm_scores(query, 2000.0)[doc_id] == pytest.approx(lm_oracle(query, doc_id, 2000.0), rel=1e-12)


def test_lm_score_skips_unknown_terms():
    index = InvertedIndex.build(DOCS)
    assert index.lm_score(["a", "zzz"], "d1") == pytest.approx(index.lm_score(["a"], "d1"))
    assert index.lm_scores(["zzz"]) == {}
    assert len(retrieve_candidate_entities(index, ["zzz"])) == 0
    assert len(retrieve_candidate_entities(index, [])) == 0


def test_lm_score_grows_with_term_frequency():
    """文档长度相同时，查询词出现越多得分越高；内容相同的文档得分相同"""
    index = InvertedIndex.build(
        {
            "tf1": ["a", "z", "z", "z"],
            "tf2": ["a", "a", "z", "z"],
            "tf3": ["a", "a", "a", "z"],
            "tf2_copy": ["a", "a", "z", "z"],
        }
    )
    scores = index.lm_scores(["a"], 2000.0)
    assert scores["tf1"] < scores["tf2"] < scores["tf3"]
    assert scores["tf2"] == scores["tf2_copy"]
    assert index.lm_score(["a", "z"], "tf2") == index.lm_score(["a", "z"], "tf2_copy")


def test_lm_score_rejects_bad_input():
    index = InvertedIndex.build(DOCS)
    with pytest.raises(ValueError):
        index.lm_score(["a"], "d1", mu=0)
    with pytest.raises(KeyError):
        index.lm_score(["a"], "missing")


def test_retrieve_candidate_entities_order_and_limit():
    index = InvertedIndex.build(DOCS)
    ranked = retrieve_candidate_entities(index, ["a", "b"], n=2)
    assert len(ranked) == 2
    assert ranked.ids()[0] == "d1"
    scores = [s for _, s in ranked]
    assert scores == sorted(scores, reverse=True)


def test_bm25_matches_oracle():
    index = InvertedIndex.build(DOCS)
    query = ["c", "b", "c"]
    scores = index.bm25_scores(query)
    assert set(scores) == {"d1", "d2", "d3"}
    for doc_id, value in scores.items():
        assert value == pytest.approx(bm25_oracle(query, doc_id), rel=1e-9)
    ranked = bm25_rank_tables(index, query, k=2)
    assert len(ranked) == 2
    assert "d2" not in index.bm25_scores(["a"])


def test_bm25_duplicate_tables_score_equally():
    index = InvertedIndex.build({**DOCS, "dup_a": ["b", "c", "g"], "dup_b": ["b", "c", "g"]})
    scores = index.bm25_scores(["c", "g"])
    assert scores["dup_a"] == scores["dup_b"]
    ranked = bm25_rank_tables(index, ["c", "g"])
    # 同分按id排序
    assert ranked.ids()[:2] == ["dup_a", "dup_b"]


def test_table_relevance_normalization():
    index = InvertedIndex.build(DOCS)
    relevance = table_relevance(bm25_rank_tables(index, ["a", "c"]))
    assert max(relevance.values()) == 1.0
    assert min(relevance.values()) == 0.0
    single = table_relevance(bm25_rank_tables(index, ["e"]))
    assert single == {"d3": 1.0}


def test_index_record_reload():
    index = InvertedIndex.build(DOCS)
    reloaded = InvertedIndex.from_record(index.to_record())
    assert reloaded.postings == index.postings
    assert reloaded.lm_scores(["a", "c"]) == index.lm_scores(["a", "c"])
