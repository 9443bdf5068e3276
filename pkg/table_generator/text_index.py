"""倒排索引、Dirichlet平滑语言模型打分与BM25表格排序"""

import math
from collections import Counter
from typing import Any, Dict, List, Mapping, Sequence, Tuple

import numpy as np

from .ranking import RankedList, minmax_normalize


class InvertedIndex:
    """倒排索引，构建后只读"""

    def __init__(
        self,
        postings: Dict[str, List[Tuple[str, int]]],
        doc_lengths: Dict[str, int],
    ):
        self.postings = postings
        self.doc_lengths = doc_lengths
        self.collection_length = sum(doc_lengths.values())
        self.collection_tf = {term: sum(tf for _, tf in plist) for term, plist in postings.items()}
        self.doc_ids = sorted(doc_lengths)
        self._positions = {doc_id: i for i, doc_id in enumerate(self.doc_ids)}
        self._lengths = np.array([doc_lengths[d] for d in self.doc_ids], dtype=float)
        self._tf: Dict[Tuple[str, str], int] = {}
        for term, plist in postings.items():
            for doc_id, tf in plist:
                self._tf[(doc_id, term)] = tf

    @classmethod
    def build(cls, documents: Mapping[str, Sequence[str]]) -> "InvertedIndex":
        """
        从文档词项序列构建索引

        Args:
            documents: 文档id到词项序列的映射

        Returns:
            倒排索引
        """
        postings: Dict[str, List[Tuple[str, int]]] = {}
        doc_lengths: Dict[str, int] = {}
        for doc_id in sorted(documents):
            tokens = documents[doc_id]
            doc_lengths[doc_id] = len(tokens)
            for term, tf in sorted(Counter(tokens).items()):
                postings.setdefault(term, []).append((doc_id, tf))
        return cls(dict(sorted(postings.items())), doc_lengths)

    def __len__(self) -> int:
        return len(self.doc_lengths)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self.doc_lengths

    def tf(self, term: str, doc_id: str) -> int:
        return self._tf.get((doc_id, term), 0)

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def _term_vector(self, term: str) -> np.ndarray:
        vector = np.zeros(len(self.doc_ids))
        for doc_id, tf in self.postings.get(term, ()):
            vector[self._positions[doc_id]] = tf
        return vector

    def lm_score(self, query: Sequence[str], doc_id: str, mu: float = 2000.0) -> float:
        """
        Dirichlet平滑的查询似然对数得分

        Args:
            query: 查询词项
            doc_id: 文档id
            mu: 平滑参数

        Returns:
            Σ log[(tf(t,d) + mu·P(t|C)) / (|d| + mu)]，集合中不存在的词被跳过
        """
        if mu <= 0:
            raise ValueError(f"mu 必须大于0: {mu}")
        if doc_id not in self.doc_lengths:
            raise KeyError(f"未知的文档: {doc_id}")
        length = self.doc_lengths[doc_id]
        score = 0.0
        for term in query:
            ctf = self.collection_tf.get(term, 0)
            if ctf == 0:
                continue
            p_collection = ctf / self.collection_length
            score += math.log((self.tf(term, doc_id) + mu * p_collection) / (length + mu))
        return score

    def lm_scores(self, query: Sequence[str], mu: float = 2000.0) -> Dict[str, float]:
        """
        对所有文档计算语言模型得分

        Returns:
            文档id到得分的映射，查询词均不在集合中时为空
        """
        terms = [t for t in query if self.collection_tf.get(t, 0) > 0]
        if not terms or not self.doc_ids:
            return {}
        scores = np.zeros(len(self.doc_ids))
        for term in terms:
            p_collection = self.collection_tf[term] / self.collection_length
            scores += np.log((self._term_vector(term) + mu * p_collection) / (self._lengths + mu))
        return dict(zip(self.doc_ids, scores.tolist()))

    def bm25_scores(
        self, query: Sequence[str], k1: float = 1.2, b: float = 0.75
    ) -> Dict[str, float]:
        """
        BM25得分，只返回至少包含一个查询词的文档

        idf = log(1 + (N - df + 0.5) / (df + 0.5))，查询词去重后累加

        Returns:
            文档id到得分的映射
        """
        n_docs = len(self.doc_ids)
        if n_docs == 0:
            return {}
        avgdl = self.collection_length / n_docs if self.collection_length else 1.0
        scores: Dict[str, float] = {}
        for term in sorted(set(query)):
            plist = self.postings.get(term)
            if not plist:
                continue
            df = len(plist)
            idf = math.log(1.0 + (n_docs - df + 0.5) / (df + 0.5))
            for doc_id, tf in plist:
                norm = k1 * (1.0 - b + b * self.doc_lengths[doc_id] / avgdl)
                scores[doc_id] = scores.get(doc_id, 0.0) + idf * tf * (k1 + 1.0) / (tf + norm)
        return scores

    def to_record(self) -> Dict[str, Any]:
        return {
            "doc_lengths": self.doc_lengths,
            "postings": {term: [[d, tf] for d, tf in plist] for term, plist in self.postings.items()},
        }

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> "InvertedIndex":
        postings = {
            term: [(str(d), int(tf)) for d, tf in plist]
            for term, plist in record["postings"].items()
        }
        doc_lengths = {str(d): int(n) for d, n in record["doc_lengths"].items()}
        return cls(postings, doc_lengths)


def retrieve_candidate_entities(
    index: InvertedIndex, query: Sequence[str], n: int = 100, mu: float = 2000.0
) -> RankedList:
    """
    用语言模型从 e_a 索引中取前n个候选实体

    Args:
        index: 实体 all 表示上的倒排索引
        query: 查询词项（已去停用词）
        n: 候选数量
        mu: Dirichlet平滑参数

    Returns:
        得分降序的实体列表
    """
    if not query:
        return RankedList()
    return RankedList.from_scores(index.lm_scores(query, mu).items()).top(n)


def bm25_rank_tables(
    index: InvertedIndex,
    query: Sequence[str],
    k: int = 100,
    k1: float = 1.2,
    b: float = 0.75,
) -> RankedList:
    """
    BM25表格排序

    Args:
        index: 表格文本索引
        query: 查询词项
        k: 返回的表格数量
        k1: BM25参数
        b: BM25参数

    Returns:
        得分降序的表格列表，得分保留用于 P(T|q)
    """
    return RankedList.from_scores(index.bm25_scores(query, k1, b).items()).top(k)


def table_relevance(ranked: RankedList) -> Dict[str, float]:
    """
    P(T|q)：前k个表格BM25得分的min-max归一化，全部相同时为1

    Args:
        ranked: BM25排序结果

    Returns:
        表格id到 [0,1] 相关度的映射
    """
    ids = ranked.ids()
    values = minmax_normalize([score for _, score in ranked.items], constant=1.0)
    return dict(zip(ids, values.tolist()))
