"""迭代式表格生成：交替进行实体排序与列名排序，最后填充取值"""

import asyncio
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from .bundle_manager import Bundle
from .config import ENTITY_FEATURES, SCHEMA_FEATURES, Config
from .entity_ranking import CompatibilityChecker, EntityFeatures, EntityRanker
from .errors import InputError, PipelineError
from .ranking import RankedList
from .schema_determination import LabelFeatures, QueryContext, SchemaDeterminer
from .schema_norm import SchemaNormalizer
from .search_hits import HitsProvider, create_provider
from .semantic_match import DrrmTksModel
from .value_lookup import ValueMatrix, fill_values, lookup_relevance

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RoundSnapshot:
    """某一轮的实体排序和列名排序结果"""

    round_index: int
    entities: RankedList
    labels: RankedList


@dataclass
class GeneratedTable:
    """生成的表格 (E, S, V) 以及每一轮的快照"""

    query: str
    entities: RankedList
    labels: RankedList
    values: ValueMatrix
    rounds_executed: int
    snapshots: List[RoundSnapshot] = field(default_factory=list)
    query_id: str = ""

    def to_record(self) -> Dict[str, Any]:
        cells = [
            {"row": i, "col": j, "value": fact.value, "provenance": fact.provenance.to_record()}
            for i, j, fact in self.values.filled()
        ]
        record = {
            "query": self.query,
            "entities": list(self.values.entity_ids),
            "schema": list(self.values.labels),
            "cells": cells,
        }
        if self.query_id:
            record["qid"] = self.query_id
        return record

    def to_json(self) -> str:
        return json.dumps(self.to_record(), ensure_ascii=False, sort_keys=True)

    def to_tsv(self) -> str:
        """按列宽对齐的制表符分隔文本，第一行为列名"""
        header = ["entity"] + list(self.values.labels)
        rows = [header]
        for i, entity_id in enumerate(self.values.entity_ids):
            values = [self.values.value(i, j) or "" for j in range(len(self.values.labels))]
            rows.append([entity_id] + values)
        widths = [max(len(row[j]) for row in rows) for j in range(len(header))]
        lines = [
            "\t".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip() for row in rows
        ]
        return "\n".join(lines)


class TableGenerator:
    """表格生成器，构建后只读，可以被多个查询并发使用"""

    def __init__(
        self,
        bundle: Bundle,
        config: Optional[Config] = None,
        entity_model: Optional[DrrmTksModel] = None,
        schema_model: Optional[DrrmTksModel] = None,
        hits_provider: Optional[HitsProvider] = None,
        entity_weights: Optional[Sequence[float]] = None,
        schema_weights: Optional[Sequence[float]] = None,
    ):
        """
        初始化表格生成器

        Args:
            bundle: 数据包
            config: 配置，为None时使用默认配置
            entity_model: entity-matcher 模型
            schema_model: schema-matcher 模型
            hits_provider: sh(s,e) 的命中数来源，为None时按配置创建
            entity_weights: 7个实体特征权重，默认均匀
            schema_weights: 5个列名特征权重，默认均匀
        """
        self.bundle = bundle
        self.config = config or Config()
        self.entity_weights = list(entity_weights or [1.0] * len(ENTITY_FEATURES))
        self.schema_weights = list(schema_weights or [1.0] * len(SCHEMA_FEATURES))
        self.normalizer = SchemaNormalizer(bundle.synonyms, self.config.delta, bundle.analyzer)
        checker = CompatibilityChecker(bundle.kb, bundle.corpus, self.normalizer)
        self.entity_ranker = EntityRanker(
            bundle.kb,
            bundle.entity_index,
            checker,
            model=entity_model,
            mu=self.config.mu,
            candidate_n=self.config.candidate_n,
            analyzer=bundle.analyzer,
        )
        self.schema_determiner = SchemaDeterminer(
            bundle.corpus,
            bundle.kb,
            bundle.table_index,
            checker,
            model=schema_model,
            hits_provider=hits_provider
            or create_provider(self.config.hits_provider, self.config.hits_file),
            gamma=self.config.gamma,
            table_k=self.config.table_k,
            label_candidates=self.config.label_candidates,
            bm25_k1=self.config.bm25_k1,
            bm25_b=self.config.bm25_b,
            ar_weights=self.config.ar_weights,
            hits_threshold=self.config.hits_threshold,
            analyzer=bundle.analyzer,
        )

    def run_round(
        self,
        query: str,
        round_index: int,
        previous: Optional[RoundSnapshot],
        k_feedback: int,
        entity_weights: Sequence[float],
        schema_weights: Sequence[float],
        context: Optional[QueryContext] = None,
    ) -> RoundSnapshot:
        """
        执行一轮：两个子任务都只读取上一轮的结果

        Args:
            query: 查询文本
            round_index: 轮次
            previous: 上一轮快照，第0轮为None
            k_feedback: 反馈的前k个结果
            entity_weights: 实体特征权重
            schema_weights: 列名特征权重
            context: 查询上下文

        Returns:
            本轮快照
        """
        feedback_labels = previous.labels.ids()[:k_feedback] if previous else []
        feedback_entities = previous.entities.ids()[:k_feedback] if previous else []
        try:
            entities = self.entity_ranker.rank_entities(query, feedback_labels, entity_weights)
        except Exception as e:
            raise PipelineError(round_index, "实体排序", e)
        try:
            labels = self.schema_determiner.rank_labels(query, feedback_entities, schema_weights, context)
        except Exception as e:
            raise PipelineError(round_index, "列名排序", e)
        logger.debug("第 %d 轮: %d 个实体, %d 个列名", round_index, len(entities), len(labels))
        return RoundSnapshot(round_index, entities, labels)

    def _fill(
        self,
        query: str,
        entities: RankedList,
        labels: RankedList,
        n_out: int,
        m_out: int,
        round_index: int,
    ) -> ValueMatrix:
        try:
            relevance = lookup_relevance(
                self.bundle.table_index,
                self.bundle.analyzer.analyze(query),
                self.config.bm25_k1,
                self.config.bm25_b,
            )
            return fill_values(
                entities.ids()[:n_out],
                labels.ids()[:m_out],
                relevance,
                self.bundle.catalog,
                self.normalizer,
                self.config.lookup_sources,
            )
        except Exception as e:
            raise PipelineError(round_index, "取值", e)

    def generate_table(
        self,
        query: str,
        rounds: Optional[int] = None,
        k_feedback: Optional[int] = None,
        n_out: Optional[int] = None,
        m_out: Optional[int] = None,
        entity_weights: Optional[Sequence[float]] = None,
        schema_weights: Optional[Sequence[float]] = None,
        query_id: str = "",
    ) -> GeneratedTable:
        """
        迭代生成表格：第0轮只用查询，之后每轮把上一轮的前k个列名和实体作为反馈

        Args:
            query: 查询文本
            rounds: 迭代轮数（不含第0轮）
            k_feedback: 反馈的前k个结果
            n_out: 输出的实体数量
            m_out: 输出的列名数量
            entity_weights: 实体特征权重
            schema_weights: 列名特征权重
            query_id: 查询编号

        Returns:
            生成的表格
        """
        rounds = self.config.rounds if rounds is None else rounds
        k_feedback = self.config.k_feedback if k_feedback is None else k_feedback
        n_out = self.config.n_out if n_out is None else n_out
        m_out = self.config.m_out if m_out is None else m_out
        entity_weights = list(entity_weights or self.entity_weights)
        schema_weights = list(schema_weights or self.schema_weights)
        if rounds < 0:
            raise InputError(f"rounds 不能为负数: {rounds}")
        if k_feedback < 1:
            raise InputError(f"k_feedback 必须不小于1: {k_feedback}")

        context = self.schema_determiner.query_context(query)
        snapshot = None
        snapshots: List[RoundSnapshot] = []
        for round_index in range(rounds + 1):
            snapshot = self.run_round(
                query, round_index, snapshot, k_feedback, entity_weights, schema_weights, context
            )
            snapshots.append(snapshot)
        values = self._fill(query, snapshot.entities, snapshot.labels, n_out, m_out, rounds)
        return GeneratedTable(
            query, snapshot.entities, snapshot.labels, values, rounds, snapshots, query_id
        )

    def round_features(
        self, query: str, round_index: int, k_feedback: Optional[int] = None
    ) -> Tuple[EntityFeatures, LabelFeatures]:
        """
        第 round_index 轮排序所用的候选特征，反馈来自按当前权重执行的上一轮

        Args:
            query: 查询文本
            round_index: 轮次，0 表示不带反馈
            k_feedback: 反馈的前k个结果

        Returns:
            (实体特征, 列名特征)
        """
        if round_index < 0:
            raise InputError(f"round 不能为负数: {round_index}")
        k_feedback = self.config.k_feedback if k_feedback is None else k_feedback
        context = self.schema_determiner.query_context(query)
        previous = None
        for index in range(round_index):
            previous = self.run_round(
                query, index, previous, k_feedback, self.entity_weights, self.schema_weights, context
            )
        feedback_labels = previous.labels.ids()[:k_feedback] if previous else []
        feedback_entities = previous.entities.ids()[:k_feedback] if previous else []
        try:
            entity_features = self.entity_ranker.entity_features(query, feedback_labels, self.entity_weights)
            label_features = self.schema_determiner.label_features(
                query, feedback_entities, self.schema_weights, context
            )
        except Exception as e:
            raise PipelineError(round_index, "特征计算", e)
        return entity_features, label_features

    def generate_table_oracle(
        self,
        query: str,
        ground_truth_labels: Optional[Sequence[str]] = None,
        ground_truth_entities: Optional[Sequence[str]] = None,
        n_out: Optional[int] = None,
        m_out: Optional[int] = None,
        entity_weights: Optional[Sequence[float]] = None,
        schema_weights: Optional[Sequence[float]] = None,
        query_id: str = "",
    ) -> GeneratedTable:
        """
        Oracle：用标准答案作为反馈做一次排序，没有提供标准答案的子任务使用第0轮结果

        Args:
            query: 查询文本
            ground_truth_labels: 标准列名，用于实体排序
            ground_truth_entities: 标准实体，用于列名排序
            n_out: 输出的实体数量
            m_out: 输出的列名数量
            entity_weights: 实体特征权重
            schema_weights: 列名特征权重
            query_id: 查询编号

        Returns:
            生成的表格
        """
        if ground_truth_labels is None and ground_truth_entities is None:
            raise InputError("Oracle 需要标准列名或标准实体")
        for name, value in (("标准列名", ground_truth_labels), ("标准实体", ground_truth_entities)):
            if value is not None and not value:
                raise InputError(f"Oracle 的{name}为空")
        n_out = self.config.n_out if n_out is None else n_out
        m_out = self.config.m_out if m_out is None else m_out
        entity_weights = list(entity_weights or self.entity_weights)
        schema_weights = list(schema_weights or self.schema_weights)

        context = self.schema_determiner.query_context(query)
        feedback = RoundSnapshot(
            0,
            RankedList.from_scores((e, 0.0) for e in ground_truth_entities or []),
            RankedList.from_scores((s, 0.0) for s in ground_truth_labels or []),
        )
        try:
            entities = self.entity_ranker.rank_entities(query, list(ground_truth_labels or []), entity_weights)
        except Exception as e:
            raise PipelineError(1, "Oracle 实体排序", e)
        try:
            labels = self.schema_determiner.rank_labels(
                query, list(ground_truth_entities or []), schema_weights, context
            )
        except Exception as e:
            raise PipelineError(1, "Oracle 列名排序", e)
        snapshot = RoundSnapshot(1, entities, labels)
        values = self._fill(query, entities, labels, n_out, m_out, 1)
        return GeneratedTable(query, entities, labels, values, 1, [feedback, snapshot], query_id)

    async def generate_batch(
        self,
        queries: Sequence[Tuple[str, str]],
        max_concurrent: int = 4,
        **kwargs,
    ) -> List[Union[GeneratedTable, Exception]]:
        """
        并发生成多个查询的表格，结果按输入顺序返回

        Args:
            queries: (查询编号, 查询文本) 列表
            max_concurrent: 最大并发数
            **kwargs: 传给 generate_table 的参数

        Returns:
            生成的表格，失败的查询对应异常对象
        """
        # 使用信号量控制最大并发数
        semaphore = asyncio.Semaphore(max_concurrent)

        async def generate_with_semaphore(query_id: str, query: str):
            async with semaphore:
                return await asyncio.to_thread(
                    self.generate_table, query, query_id=query_id, **kwargs
                )

        tasks = [generate_with_semaphore(qid, q) for qid, q in queries]
        return await asyncio.gather(*tasks, return_exceptions=True)
