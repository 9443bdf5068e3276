"""核心列实体排序：特征 φ1–φ7、实体-列名兼容矩阵与线性组合"""

import functools
import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .analyzer import DEFAULT_ANALYZER, Analyzer
from .config import ENTITY_FEATURES
from .corpus import Entity, TableCorpus, entity_representation
from .errors import MissingModelError
from .ranking import RankedList, combine_features, normalize_columns
from .schema_norm import LABEL_CACHE_SIZE, SchemaNormalizer
from .semantic_match import DrrmTksModel, score
from .text_index import InvertedIndex, retrieve_candidate_entities

logger = logging.getLogger(__name__)


class CompatibilityChecker:
    """判断实体是否具有某个列名（知识库属性或所在表格的列名），结果缓存"""

    def __init__(self, kb: Mapping[str, Entity], corpus: TableCorpus, normalizer: SchemaNormalizer):
        self.kb = kb
        self.corpus = corpus
        self.normalizer = normalizer
        self._kb_lookup = functools.lru_cache(maxsize=LABEL_CACHE_SIZE)(self._match_kb)
        self._tc_lookup = functools.lru_cache(maxsize=LABEL_CACHE_SIZE)(self._match_tc)
        self._unknown: Set[str] = set()

    def match_kb(self, entity_id: str, label: str) -> int:
        """
        实体在知识库中是否具有与label匹配的属性

        Args:
            entity_id: 实体标识
            label: 列名

        Returns:
            1 或 0，未知实体返回0并记录警告
        """
        return self._kb_lookup(entity_id, self.normalizer.normalize(label))

    def _match_kb(self, entity_id: str, label: str) -> int:
        entity = self.kb.get(entity_id)
        if entity is None:
            if entity_id not in self._unknown:
                self._unknown.add(entity_id)
                logger.warning("知识库中不存在实体 %s", entity_id)
            return 0
        return int(any(self.normalizer.labels_match(p, label) for p in entity.properties))

    def match_tc(self, entity_id: str, label: str) -> int:
        """
        是否存在一个表格，实体在其核心列中且列名与label匹配

        Args:
            entity_id: 实体标识
            label: 列名

        Returns:
            1 或 0
        """
        return self._tc_lookup(entity_id, self.normalizer.normalize(label))

    def _match_tc(self, entity_id: str, label: str) -> int:
        for table_id in self.corpus.tables_with_core_entity(entity_id):
            headings = self.corpus.get(table_id).headings
            if any(self.normalizer.labels_match(h, label) for h in headings):
                return 1
        return 0

    def compatible(self, entity_id: str, label: str) -> int:
        return self.match_kb(entity_id, label) or self.match_tc(entity_id, label)

    def matrix(self, entity_ids: Sequence[str], labels: Sequence[str]) -> "CompatibilityMatrix":
        entries = np.zeros((len(entity_ids), len(labels)), dtype=np.int8)
        for i, entity_id in enumerate(entity_ids):
            for j, label in enumerate(labels):
                entries[i, j] = self.compatible(entity_id, label)
        return CompatibilityMatrix(list(entity_ids), list(labels), entries)


@dataclass
class CompatibilityMatrix:
    """实体×列名的二值兼容矩阵"""

    entity_ids: List[str]
    labels: List[str]
    entries: np.ndarray

    def row_mean(self, entity_id: str) -> float:
        if not self.labels:
            raise ValueError("列名集合为空，ESC 无定义")
        return float(self.entries[self.entity_ids.index(entity_id)].mean())

    def column_mean(self, label: str) -> float:
        if not self.entity_ids:
            raise ValueError("实体集合为空，ESC 无定义")
        return float(self.entries[:, self.labels.index(label)].mean())


def esc_entity(checker: CompatibilityChecker, labels: Sequence[str], entity_id: str) -> float:
    """
    实体-列名兼容度 ESC(S, e)：实体具有的列名比例

    Args:
        checker: 兼容性判断器
        labels: 上一轮的前k个列名
        entity_id: 实体标识

    Returns:
        [0,1] 之间的取值
    """
    if not labels:
        raise ValueError("列名集合为空，ESC 无定义")
    return sum(checker.compatible(entity_id, s) for s in labels) / len(labels)


@dataclass
class EntityFeatures:
    """候选实体的特征矩阵，列顺序为 φ1–φ7"""

    entity_ids: List[str]
    raw: np.ndarray

    @property
    def normalized(self) -> np.ndarray:
        return normalize_columns(self.raw)

    def vector(self, entity_id: str) -> Dict[str, float]:
        row = self.raw[self.entity_ids.index(entity_id)]
        return dict(zip(ENTITY_FEATURES, row.tolist()))


class EntityRanker:
    """核心列实体排序器"""

    def __init__(
        self,
        kb: Mapping[str, Entity],
        entity_index: InvertedIndex,
        checker: CompatibilityChecker,
        model: Optional[DrrmTksModel] = None,
        mu: float = 2000.0,
        candidate_n: int = 100,
        analyzer: Analyzer = DEFAULT_ANALYZER,
    ):
        """
        初始化实体排序器

        Args:
            kb: 实体存储
            entity_index: 实体 all 表示上的倒排索引
            checker: 实体-列名兼容性判断器
            model: entity-matcher 模型，用于 φ2–φ6
            mu: Dirichlet平滑参数
            candidate_n: 语言模型候选数量
            analyzer: 文本分析器
        """
        self.kb = kb
        self.entity_index = entity_index
        self.checker = checker
        self.model = model
        self.mu = mu
        self.candidate_n = candidate_n
        self.analyzer = analyzer
        self._representations: Dict[str, Tuple[List[str], List[str]]] = {}

    def _description_and_properties(self, entity_id: str) -> Tuple[List[str], List[str]]:
        cached = self._representations.get(entity_id)
        if cached is None:
            entity = self.kb.get(entity_id)
            if entity is None:
                cached = ([], [])
            else:
                cached = (
                    entity_representation(entity, "description", self.analyzer),
                    entity_representation(entity, "properties", self.analyzer),
                )
            self._representations[entity_id] = cached
        return cached

    def _require_model(self, weights: Sequence[float], indices: Sequence[int]) -> bool:
        """模型缺失时，权重非零的特征报错，权重为零的特征取0"""
        if self.model is not None:
            return True
        for i in indices:
            if weights[i] != 0:
                raise MissingModelError(ENTITY_FEATURES[i], "entity-matcher")
        return False

    def candidates(self, query_tokens: Sequence[str]) -> RankedList:
        return retrieve_candidate_entities(self.entity_index, query_tokens, self.candidate_n, self.mu)

    def entity_features(
        self,
        query: str,
        schema_labels: Sequence[str],
        weights: Optional[Sequence[float]] = None,
    ) -> EntityFeatures:
        """
        计算候选实体的全部特征

        Args:
            query: 查询文本
            schema_labels: 上一轮的前k个列名，第0轮为空
            weights: 特征权重，用于判断缺失模型时是否可以跳过

        Returns:
            候选实体特征矩阵，第0轮 φ4–φ7 为0
        """
        weights = list(weights) if weights is not None else [1.0] * len(ENTITY_FEATURES)
        query_tokens = self.analyzer.analyze(query)
        schema_tokens: List[str] = []
        for label in schema_labels:
            schema_tokens.extend(self.analyzer.analyze(label))
        with_schema = bool(schema_labels)

        use_query_model = self._require_model(weights, (1, 2))
        use_schema_model = with_schema and self._require_model(weights, (3, 4, 5))

        ranked = self.candidates(query_tokens)
        raw = np.zeros((len(ranked), len(ENTITY_FEATURES)))
        for i, (entity_id, lm_score) in enumerate(ranked):
            description, properties = self._description_and_properties(entity_id)
            raw[i, 0] = lm_score
            if use_query_model:
                raw[i, 1] = score(self.model, query_tokens, description).value
                raw[i, 2] = score(self.model, query_tokens, properties).value
            if use_schema_model:
                raw[i, 3] = score(self.model, schema_tokens, description).value
                raw[i, 4] = score(self.model, schema_tokens, properties).value
                raw[i, 5] = score(self.model, query_tokens + schema_tokens, description + properties).value
            if with_schema:
                raw[i, 6] = esc_entity(self.checker, schema_labels, entity_id)
        return EntityFeatures(ranked.ids(), raw)

    def rank_entities(
        self,
        query: str,
        schema_labels: Sequence[str],
        weights: Sequence[float],
    ) -> RankedList:
        """
        score(e,q) = Σ w_i φ_i(e, q, S)，特征先做查询内min-max归一化

        Args:
            query: 查询文本
            schema_labels: 上一轮的前k个列名
            weights: 7个特征权重

        Returns:
            排序后的实体列表，同分按实体id
        """
        if len(weights) != len(ENTITY_FEATURES):
            raise ValueError(f"实体排序需要 {len(ENTITY_FEATURES)} 个权重，实际为 {len(weights)}")
        features = self.entity_features(query, schema_labels, weights)
        return combine_features(features.entity_ids, features.normalized, weights)
