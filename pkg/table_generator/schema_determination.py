"""列名（schema）排序：列填充、实体增强列填充、属性检索与ESC"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .analyzer import DEFAULT_ANALYZER, Analyzer
from .config import SCHEMA_FEATURES
from .corpus import Cell, Entity, RelationalTable, TableCorpus
from .entity_ranking import CompatibilityChecker
from .errors import MissingModelError
from .ranking import RankedList, combine_features, normalize_columns
from .schema_norm import SchemaNormalizer
from .search_hits import HitsProvider, NullProvider
from .semantic_match import DrrmTksModel, score
from .text_index import InvertedIndex, bm25_rank_tables, table_relevance

logger = logging.getLogger(__name__)


def p_s_given_t(label: str, headings: Sequence[str], gamma: float, normalizer: SchemaNormalizer) -> int:
    """
    P(s|T)：表格中存在与label编辑相似度不小于gamma的列名时为1

    Args:
        label: 候选列名
        headings: 表格列名
        gamma: 编辑相似度阈值
        normalizer: 列名匹配器

    Returns:
        1 或 0
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma 必须在 [0,1] 之间: {gamma}")
    return int(any(normalizer.similarity(label, h) >= gamma for h in headings))


def _term_vector(tokens: Sequence[str]) -> Counter:
    return Counter(tokens)


def cosine(a: Counter, b: Counter) -> float:
    """词频向量的余弦相似度，任一向量为空时为0"""
    if not a or not b:
        return 0.0
    dot = sum(count * b.get(term, 0) for term, count in a.items())
    norm_a = math.sqrt(sum(c * c for c in a.values()))
    norm_b = math.sqrt(sum(c * c for c in b.values()))
    return dot / (norm_a * norm_b)


def cell_text(cell: Cell) -> str:
    """单元格文本，实体引用优先使用锚文本"""
    if cell.is_entity and cell.anchor:
        return cell.anchor
    return cell.value


@dataclass
class QueryContext:
    """一次查询在schema排序中共享的检索结果"""

    query: str
    tokens: List[str]
    tables: RankedList
    relevance: Dict[str, float] = field(default_factory=dict)

    @property
    def best_table(self) -> Optional[str]:
        """T* = argmax P(T|q)"""
        return self.tables.ids()[0] if len(self.tables) else None


@dataclass
class LabelFeatures:
    """候选列名的特征矩阵，列顺序为 φ1–φ5"""

    labels: List[str]
    raw: np.ndarray

    @property
    def normalized(self) -> np.ndarray:
        return normalize_columns(self.raw)

    def vector(self, label: str) -> Dict[str, float]:
        row = self.raw[self.labels.index(label)]
        return dict(zip(SCHEMA_FEATURES, row.tolist()))


class SchemaDeterminer:
    """列名排序器，候选列名以归一化形式去重，输出使用首次出现的原始写法"""

    def __init__(
        self,
        corpus: TableCorpus,
        kb: Mapping[str, Entity],
        table_index: InvertedIndex,
        checker: CompatibilityChecker,
        model: Optional[DrrmTksModel] = None,
        hits_provider: Optional[HitsProvider] = None,
        gamma: float = 0.8,
        table_k: int = 100,
        label_candidates: int = 100,
        bm25_k1: float = 1.2,
        bm25_b: float = 0.75,
        ar_weights: Sequence[float] = (1.0, 1.0, 1.0, 1.0),
        hits_threshold: float = 1e6,
        analyzer: Analyzer = DEFAULT_ANALYZER,
    ):
        """
        初始化列名排序器

        Args:
            corpus: 关系表语料
            kb: 实体存储
            table_index: 表格文本上的BM25索引
            checker: 实体-列名兼容性判断器（与实体排序共用）
            model: schema-matcher 模型，用于 φ3
            hits_provider: sh(s,e) 的命中数来源
            gamma: P(s|T) 的编辑相似度阈值
            table_k: 检索的表格数量
            label_candidates: 第0轮候选列名数量
            bm25_k1: BM25参数
            bm25_b: BM25参数
            ar_weights: 属性检索四个分量 (match, drel, sh, kb) 的权重
            hits_threshold: sh 的命中数阈值
            analyzer: 文本分析器
        """
        if len(ar_weights) != 4:
            raise ValueError("ar_weights 必须包含4个权重")
        self.corpus = corpus
        self.kb = kb
        self.table_index = table_index
        self.checker = checker
        self.normalizer = checker.normalizer
        self.model = model
        self.hits_provider = hits_provider or NullProvider()
        self.gamma = gamma
        self.table_k = table_k
        self.label_candidates = label_candidates
        self.bm25_k1 = bm25_k1
        self.bm25_b = bm25_b
        self.ar_weights = tuple(float(w) for w in ar_weights)
        self.hits_threshold = hits_threshold
        self.analyzer = analyzer
        self._display: Dict[str, str] = {}
        self._cell_vectors: Dict[str, List[List[Counter]]] = {}
        for table in corpus.tables.values():
            for heading in table.headings:
                self._register(heading)
        for entity_id in sorted(kb):
            for label in kb[entity_id].properties:
                self._register(label)

    def _register(self, label: str) -> Optional[str]:
        key = self.normalizer.normalize(label)
        if not key:
            return None
        self._display.setdefault(key, label)
        return key

    def display(self, label: str) -> str:
        key = self.normalizer.normalize(label)
        return self._display.get(key, label)

    def query_context(self, query: str) -> QueryContext:
        """
        检索与查询相关的表格并计算 P(T|q)

        Args:
            query: 查询文本

        Returns:
            查询上下文
        """
        tokens = self.analyzer.analyze(query)
        tables = bm25_rank_tables(self.table_index, tokens, self.table_k, self.bm25_k1, self.bm25_b)
        return QueryContext(query, tokens, tables, table_relevance(tables))

    def column_population(
        self, context: QueryContext, labels: Optional[Sequence[str]] = None
    ) -> Dict[str, float]:
        """
        P(s|q) = Σ_T P(s|T) P(T|q)

        Args:
            context: 查询上下文
            labels: 需要打分的列名，为None时取检索到的表格中的全部列名

        Returns:
            列名（输出写法）到得分的映射，没有检索到表格时为空
        """
        if not len(context.tables):
            return {}
        if labels is None:
            labels = self._labels_of_tables(context.tables.ids())
        scores = {}
        for label in labels:
            total = 0.0
            for table_id in context.tables.ids():
                headings = self.corpus.get(table_id).headings
                total += p_s_given_t(label, headings, self.gamma, self.normalizer) * context.relevance[table_id]
            scores[self.display(label)] = total
        return scores

    def entity_enhanced_cp(
        self, context: QueryContext, entity_ids: Sequence[str], labels: Sequence[str]
    ) -> Dict[str, float]:
        """
        P(s|q,E) ∝ Σ_T P(s|T) P(T|E) P(T|q)，P(T)视为均匀先验后省略

        Args:
            context: 查询上下文
            entity_ids: 上一轮的前k个实体
            labels: 需要打分的列名

        Returns:
            列名到得分的映射
        """
        if not entity_ids:
            raise ValueError("实体集合为空，实体增强列填充无定义")
        entity_set = set(entity_ids)
        coverage = {}
        for table_id in context.tables.ids():
            core = set(self.corpus.get(table_id).core_entities)
            coverage[table_id] = len(core & entity_set) / len(entity_set)
        scores = {}
        for label in labels:
            total = 0.0
            for table_id, p_t_given_e in coverage.items():
                if p_t_given_e == 0:
                    continue
                headings = self.corpus.get(table_id).headings
                total += (
                    p_s_given_t(label, headings, self.gamma, self.normalizer)
                    * p_t_given_e
                    * context.relevance[table_id]
                )
            scores[self.display(label)] = total
        return scores

    def match_component(self, label: str, entity_id: str, table_id: Optional[str]) -> float:
        """
        match(s,e,T) = match(e,T) - match(e,shadow)，match为实体描述与单元格的最大余弦相似度

        阴影区域为实体所在行以及与s最匹配的列，没有匹配的列时只有实体所在行
        """
        if table_id is None:
            return 0.0
        entity = self.kb.get(entity_id)
        if entity is None:
            return 0.0
        table: RelationalTable = self.corpus.get(table_id)
        entity_vector = _term_vector(self.analyzer.analyze(entity.description))
        cell_vectors = self._cell_vectors.get(table_id)
        if cell_vectors is None:
            cell_vectors = [
                [_term_vector(self.analyzer.analyze(cell_text(cell))) for cell in row] for row in table.rows
            ]
            self._cell_vectors[table_id] = cell_vectors
        best_in_table = max(
            (cosine(entity_vector, v) for row in cell_vectors for v in row), default=0.0
        )
        shadow_rows = set(table.core_rows(entity_id))
        shadow_column = self.normalizer.best_match(label, table.headings)
        best_in_shadow = 0.0
        for i, row in enumerate(cell_vectors):
            for j, vector in enumerate(row):
                if i in shadow_rows or j == shadow_column:
                    best_in_shadow = max(best_in_shadow, cosine(entity_vector, vector))
        return best_in_table - best_in_shadow

    def drel_component(self, entity_id: str, tables: RankedList) -> float:
        """drel = (N - rank) / N，rank为核心列包含该实体的最靠前表格的名次（从1开始）"""
        total = len(tables)
        for rank, table_id in enumerate(tables.ids(), start=1):
            if entity_id in self.corpus.get(table_id).core_entities:
                return (total - rank) / total
        return 0.0

    def sh_component(self, label: str, entity_id: str) -> float:
        return 1.0 if self.hits_provider.hits(self.display(label), entity_id) >= self.hits_threshold else 0.0

    def attribute_retrieval(self, label: str, entity_ids: Sequence[str], context: QueryContext) -> float:
        """
        AR(s,E) = 1/|E| Σ_e (match + drel + sh + kb)，四个分量按 ar_weights 加权

        Args:
            label: 候选列名
            entity_ids: 上一轮的前k个实体
            context: 查询上下文

        Returns:
            属性检索得分
        """
        if not entity_ids:
            raise ValueError("实体集合为空，属性检索无定义")
        best_table = context.best_table
        w_match, w_drel, w_sh, w_kb = self.ar_weights
        total = 0.0
        for entity_id in entity_ids:
            total += (
                w_match * self.match_component(label, entity_id, best_table)
                + w_drel * self.drel_component(entity_id, context.tables)
                + w_sh * self.sh_component(label, entity_id)
                + w_kb * self.checker.match_kb(entity_id, label)
            )
        return total / len(entity_ids)

    def esc_label(self, label: str, entity_ids: Sequence[str]) -> float:
        """ESC(s, E)：具有该列名的实体比例"""
        if not entity_ids:
            raise ValueError("实体集合为空，ESC 无定义")
        return sum(self.checker.compatible(e, label) for e in entity_ids) / len(entity_ids)

    def _labels_of_tables(self, table_ids: Sequence[str]) -> List[str]:
        seen: Dict[str, str] = {}
        for table_id in table_ids:
            for heading in self.corpus.get(table_id).headings:
                key = self.normalizer.normalize(heading)
                if key and key not in seen:
                    seen[key] = self.display(heading)
        return list(seen.values())

    def candidate_labels(self, context: QueryContext, entity_ids: Sequence[str]) -> List[str]:
        """
        候选列名：第0轮为列填充得分最高的若干列名；之后加入包含反馈实体的表格列名及其知识库属性

        Args:
            context: 查询上下文
            entity_ids: 上一轮的前k个实体，第0轮为空

        Returns:
            候选列名（输出写法）
        """
        population = self.column_population(context)
        ranked = RankedList.from_scores(population.items()).top(self.label_candidates)
        candidates = ranked.ids()
        if not entity_ids:
            return candidates
        seen = {self.normalizer.normalize(label) for label in candidates}
        extra: List[str] = []
        for entity_id in entity_ids:
            sources = [self.corpus.get(t).headings for t in self.corpus.tables_with_core_entity(entity_id)]
            entity = self.kb.get(entity_id)
            if entity is not None:
                sources.append(list(entity.properties))
            for labels in sources:
                for label in labels:
                    key = self.normalizer.normalize(label)
                    if key and key not in seen:
                        seen.add(key)
                        extra.append(self.display(label))
        return candidates + sorted(extra)

    def label_features(
        self,
        query: str,
        entity_ids: Sequence[str],
        weights: Optional[Sequence[float]] = None,
        context: Optional[QueryContext] = None,
    ) -> LabelFeatures:
        """
        计算候选列名的全部特征

        Args:
            query: 查询文本
            entity_ids: 上一轮的前k个实体，第0轮为空
            weights: 特征权重，用于判断缺失模型时是否可以跳过
            context: 已计算的查询上下文

        Returns:
            候选列名特征矩阵，第0轮 φ2、φ4、φ5 为0
        """
        weights = list(weights) if weights is not None else [1.0] * len(SCHEMA_FEATURES)
        context = context or self.query_context(query)
        use_model = self.model is not None
        if not use_model and weights[2] != 0:
            raise MissingModelError(SCHEMA_FEATURES[2], "schema-matcher")

        labels = self.candidate_labels(context, entity_ids)
        population = self.column_population(context, labels)
        enhanced = self.entity_enhanced_cp(context, entity_ids, labels) if entity_ids else {}
        raw = np.zeros((len(labels), len(SCHEMA_FEATURES)))
        for i, label in enumerate(labels):
            raw[i, 0] = population.get(label, 0.0)
            if use_model:
                raw[i, 2] = score(self.model, context.tokens, self.analyzer.analyze(label)).value
            if entity_ids:
                raw[i, 1] = enhanced.get(label, 0.0)
                raw[i, 3] = self.attribute_retrieval(label, entity_ids, context)
                raw[i, 4] = self.esc_label(label, entity_ids)
        return LabelFeatures(labels, raw)

    def rank_labels(
        self,
        query: str,
        entity_ids: Sequence[str],
        weights: Sequence[float],
        context: Optional[QueryContext] = None,
    ) -> RankedList:
        """
        score(s,q) = Σ w_i φ_i(s, q, E)，特征先做查询内min-max归一化

        Args:
            query: 查询文本
            entity_ids: 上一轮的前k个实体
            weights: 5个特征权重
            context: 已计算的查询上下文

        Returns:
            排序后的列名，同分按列名
        """
        if len(weights) != len(SCHEMA_FEATURES):
            raise ValueError(f"列名排序需要 {len(SCHEMA_FEATURES)} 个权重，实际为 {len(weights)}")
        features = self.label_features(query, entity_ids, weights, context)
        return combine_features(features.labels, features.normalized, weights)
