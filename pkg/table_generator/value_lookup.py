"""事实目录与单元格取值：知识库优先，其次取最相关表格中的值"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .config import LOOKUP_SOURCES
from .corpus import CellKind, Entity, TableCorpus
from .schema_norm import SchemaNormalizer
from .text_index import InvertedIndex, bm25_rank_tables, table_relevance

logger = logging.getLogger(__name__)


class Source(str, Enum):
    KB = "kb"
    TABLE = "table"


@dataclass(frozen=True)
class Provenance:
    """取值来源：知识库属性或表格中的某个单元格"""

    source: Source
    table_id: str = ""
    row: int = -1
    column: int = -1

    def to_record(self) -> Dict[str, Any]:
        if self.source is Source.KB:
            return {"source": "kb"}
        return {"source": "table", "table": self.table_id, "row": self.row, "col": self.column}


@dataclass(frozen=True)
class FactQuadruple:
    """事实四元组 ⟨e, s, v, p⟩

    position 在知识库事实中是属性的顺序，index 是取值在属性中的顺序。
    """

    entity_id: str
    label: str
    value: str
    kind: CellKind
    provenance: Provenance
    position: int = 0
    index: int = 0

    @property
    def is_kb(self) -> bool:
        return self.provenance.source is Source.KB

    def to_record(self) -> Dict[str, Any]:
        return {
            "e": self.entity_id,
            "s": self.label,
            "v": self.value,
            "kind": self.kind.value,
            "p": self.provenance.to_record(),
            "position": self.position,
            "index": self.index,
        }

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> "FactQuadruple":
        raw = record["p"]
        if raw["source"] == "kb":
            provenance = Provenance(Source.KB)
        else:
            provenance = Provenance(Source.TABLE, str(raw["table"]), int(raw["row"]), int(raw["col"]))
        return cls(
            str(record["e"]),
            str(record["s"]),
            str(record["v"]),
            CellKind(record["kind"]),
            provenance,
            int(record["position"]),
            int(record["index"]),
        )


@dataclass
class FactCatalog:
    """以实体为中心的事实目录"""

    by_entity: Dict[str, List[FactQuadruple]] = field(default_factory=dict)

    def facts(self, entity_id: str) -> List[FactQuadruple]:
        return self.by_entity.get(entity_id, [])

    def __len__(self) -> int:
        return sum(len(facts) for facts in self.by_entity.values())

    def __iter__(self):
        for entity_id in sorted(self.by_entity):
            yield from self.by_entity[entity_id]

    @classmethod
    def from_quadruples(cls, quadruples: Iterable[FactQuadruple]) -> "FactCatalog":
        catalog = cls()
        for quad in quadruples:
            catalog.by_entity.setdefault(quad.entity_id, []).append(quad)
        return catalog


def build_catalog(corpus: TableCorpus, kb: Mapping[str, Entity]) -> FactCatalog:
    """
    构建事实目录：知识库中每个 (实体, 属性, 取值)，以及关系表中核心列为该实体的行里
    每个非核心列的非空单元格

    Args:
        corpus: 关系表语料
        kb: 实体存储

    Returns:
        事实目录
    """
    quadruples: List[FactQuadruple] = []
    for entity_id in sorted(kb):
        for position, (label, values) in enumerate(kb[entity_id].properties.items()):
            for index, value in enumerate(values):
                if not value.strip():
                    continue
                quadruples.append(
                    FactQuadruple(entity_id, label, value, CellKind.TEXT, Provenance(Source.KB), position, index)
                )
    for table in corpus.tables.values():
        for row_index, row in enumerate(table.rows):
            core = row[table.core_column]
            if not core.is_entity:
                continue
            for column, cell in enumerate(row):
                if column == table.core_column or cell.is_empty:
                    continue
                quadruples.append(
                    FactQuadruple(
                        core.value,
                        table.headings[column],
                        cell.value,
                        cell.kind,
                        Provenance(Source.TABLE, table.id, row_index, column),
                        column,
                    )
                )
    catalog = FactCatalog.from_quadruples(quadruples)
    logger.info("事实目录共 %d 条事实，覆盖 %d 个实体", len(catalog), len(catalog.by_entity))
    return catalog


def lookup_relevance(
    table_index: InvertedIndex, query_tokens: Sequence[str], k1: float = 1.2, b: float = 0.75
) -> Dict[str, float]:
    """
    取值时使用的表格相关度：BM25命中的表格映射到 [0.5,1]，未命中的表格为0

    命中表格中得分最低的一个也要高于未命中的表格，否则按表格id打破平局时会选中无关表格。
    """
    ranked = bm25_rank_tables(table_index, query_tokens, len(table_index), k1, b)
    return {table_id: 0.5 + 0.5 * value for table_id, value in table_relevance(ranked).items()}


def lookup_value(
    entity_id: str,
    label: str,
    relevance: Mapping[str, float],
    catalog: FactCatalog,
    normalizer: SchemaNormalizer,
    sources: str = "both",
) -> Optional[FactQuadruple]:
    """
    为 (实体, 列名) 选出唯一来源的取值

    知识库事实总是优先；多个知识库事实按与列名的相似度、属性顺序、取值顺序选择。
    没有知识库事实时取相关度最高的表格中的值，同分按表格id、行、列。

    Args:
        entity_id: 实体标识
        label: 列名
        relevance: 表格id到 P(T|q) 的映射
        catalog: 事实目录
        normalizer: 列名匹配器
        sources: kb / tc / both

    Returns:
        选中的事实，没有匹配时为None
    """
    if sources not in LOOKUP_SOURCES:
        raise ValueError(f"未知的取值来源: {sources}")
    matches = [q for q in catalog.facts(entity_id) if normalizer.labels_match(label, q.label)]
    if sources in ("kb", "both"):
        kb_facts = [q for q in matches if q.is_kb]
        if kb_facts:
            target = normalizer.canonical(label)

            def closeness(q: FactQuadruple) -> float:
                return 1.0 if normalizer.canonical(q.label) == target else normalizer.similarity(label, q.label)

            return min(kb_facts, key=lambda q: (-closeness(q), q.position, q.index))
    if sources in ("tc", "both"):
        table_facts = [q for q in matches if not q.is_kb]
        if table_facts:
            return min(
                table_facts,
                key=lambda q: (
                    -relevance.get(q.provenance.table_id, 0.0),
                    q.provenance.table_id,
                    q.provenance.row,
                    q.provenance.column,
                ),
            )
    return None


@dataclass
class ValueMatrix:
    """n×m 的取值矩阵，每个单元格只有一个来源"""

    entity_ids: List[str]
    labels: List[str]
    cells: List[List[Optional[FactQuadruple]]]

    def value(self, row: int, column: int) -> Optional[str]:
        fact = self.cells[row][column]
        return fact.value if fact is not None else None

    def filled(self) -> List[Tuple[int, int, FactQuadruple]]:
        return [
            (i, j, fact)
            for i, row in enumerate(self.cells)
            for j, fact in enumerate(row)
            if fact is not None
        ]


def fill_values(
    entity_ids: Sequence[str],
    labels: Sequence[str],
    relevance: Mapping[str, float],
    catalog: FactCatalog,
    normalizer: SchemaNormalizer,
    sources: str = "both",
) -> ValueMatrix:
    """
    V[i][j] = lookup_value(e_i, s_j)

    Args:
        entity_ids: 行实体
        labels: 列名
        relevance: 表格相关度
        catalog: 事实目录
        normalizer: 列名匹配器
        sources: kb / tc / both

    Returns:
        取值矩阵
    """
    cells = [
        [lookup_value(e, s, relevance, catalog, normalizer, sources) for s in labels]
        for e in entity_ids
    ]
    return ValueMatrix(list(entity_ids), list(labels), cells)


def resolve_provenance(fact: FactQuadruple, corpus: TableCorpus, kb: Mapping[str, Entity]) -> str:
    """
    按来源重新读取取值，用于溯源检查

    Args:
        fact: 事实四元组
        corpus: 关系表语料
        kb: 实体存储

    Returns:
        来源中的取值，来源不存在时抛出 KeyError
    """
    if fact.is_kb:
        entity = kb.get(fact.entity_id)
        if entity is None or fact.label not in entity.properties:
            raise KeyError(f"知识库中不存在 {fact.entity_id} 的属性 {fact.label}")
        values = entity.properties[fact.label]
        if fact.index >= len(values):
            raise KeyError(f"{fact.entity_id} 的属性 {fact.label} 没有第 {fact.index} 个取值")
        return values[fact.index]
    provenance = fact.provenance
    if provenance.table_id not in corpus.tables:
        raise KeyError(f"语料中不存在表格 {provenance.table_id}")
    table = corpus.get(provenance.table_id)
    core = table.rows[provenance.row][table.core_column]
    if not core.is_entity or core.value != fact.entity_id:
        raise KeyError(f"表格 {provenance.table_id} 第 {provenance.row} 行不属于实体 {fact.entity_id}")
    return table.rows[provenance.row][provenance.column].value
