"""表格语料与知识库的解析、关系表识别和实体表示"""

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

from .analyzer import DEFAULT_ANALYZER, Analyzer
from .errors import InputError

logger = logging.getLogger(__name__)

REPRESENTATIONS = ("all", "description", "properties")


class CellKind(str, Enum):
    ENTITY = "entity-reference"
    TEXT = "text-literal"


@dataclass(frozen=True)
class Cell:
    """表格单元格：实体引用或文本"""

    kind: CellKind
    value: str
    anchor: str = ""

    @classmethod
    def entity(cls, entity_id: str, anchor: str = "") -> "Cell":
        return cls(CellKind.ENTITY, entity_id, anchor)

    @classmethod
    def text(cls, value: str) -> "Cell":
        return cls(CellKind.TEXT, value)

    @property
    def is_entity(self) -> bool:
        return self.kind is CellKind.ENTITY

    @property
    def is_empty(self) -> bool:
        return not self.value.strip()

    def to_record(self) -> Dict[str, str]:
        if self.is_entity:
            record = {"e": self.value}
            if self.anchor:
                record["t"] = self.anchor
            return record
        return {"t": self.value}


@dataclass
class RawTable:
    """解析后、尚未分类的表格"""

    id: str
    caption: str
    page_title: str
    headings: List[str]
    rows: List[List[Cell]]

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_columns(self) -> int:
        return len(self.headings)

    def column(self, index: int) -> List[Cell]:
        return [row[index] for row in self.rows]

    def to_record(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "caption": self.caption,
            "pageTitle": self.page_title,
            "headings": list(self.headings),
            "rows": [[cell.to_record() for cell in row] for row in self.rows],
        }


@dataclass
class RelationalTable(RawTable):
    """关系表：带有核心列以及核心列实体列表"""

    core_column: int = 0
    core_entities: List[str] = field(default_factory=list)

    def core_rows(self, entity_id: str) -> List[int]:
        """
        获取核心列中引用给定实体的行号

        Args:
            entity_id: 实体标识

        Returns:
            行号列表
        """
        return [
            i
            for i, row in enumerate(self.rows)
            if row[self.core_column].is_entity and row[self.core_column].value == entity_id
        ]

    def to_record(self) -> Dict[str, Any]:
        record = super().to_record()
        record["coreColumn"] = self.core_column
        record["coreEntities"] = list(self.core_entities)
        return record


@dataclass
class Entity:
    """知识库实体"""

    id: str
    description: str
    properties: Dict[str, List[str]]
    catchall: str = ""

    def __post_init__(self):
        if not self.catchall:
            self.catchall = build_catchall(self.description, self.properties)

    def properties_text(self) -> str:
        return " ".join(
            " ".join([label] + list(values)) for label, values in self.properties.items()
        )

    def to_record(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "description": self.description,
            "properties": {k: list(v) for k, v in self.properties.items()},
        }


@dataclass
class ParseReport:
    """逐行解析的结果，记录级错误不会中断解析"""

    items: List[Any] = field(default_factory=list)
    errors: List[Tuple[int, str]] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def skipped(self) -> int:
        return len(self.errors)


def build_catchall(description: str, properties: Mapping[str, List[str]]) -> str:
    """
    拼接实体的全部文本：描述，然后每个属性的标签和取值，以单个空格连接

    Args:
        description: 实体描述
        properties: 属性映射

    Returns:
        catchall 文本
    """
    parts = [description] if description else []
    for label, values in properties.items():
        parts.append(label)
        parts.extend(values)
    return " ".join(p for p in parts if p)


def _iter_lines(stream: Iterable[str]):
    """逐行读取，流本身不可读时抛出致命错误"""
    try:
        for line_number, line in enumerate(stream, start=1):
            yield line_number, line
    except (OSError, UnicodeDecodeError) as e:
        raise InputError(f"无法读取输入流: {e}")


def _parse_cell(raw: Any) -> Cell:
    if not isinstance(raw, dict):
        raise ValueError(f"单元格格式错误: {raw!r}")
    if "e" in raw:
        link = raw["e"]
        # 一个单元格中有多个链接时取第一个
        if isinstance(link, list):
            link = link[0] if link else ""
        if not isinstance(link, str):
            raise ValueError(f"实体引用必须是字符串: {link!r}")
        if not link:
            return Cell.text(str(raw.get("t", "")))
        return Cell.entity(link, str(raw.get("t", "")))
    if "t" in raw:
        return Cell.text(str(raw["t"]))
    raise ValueError(f"单元格缺少 e 或 t 字段: {raw!r}")


def table_from_record(record: Mapping[str, Any]) -> RawTable:
    """
    从JSON对象构建表格

    Args:
        record: tables.jsonl 中的一条记录

    Returns:
        原始表格（记录中带有 coreColumn 时返回关系表）
    """
    if not isinstance(record, dict):
        raise ValueError("记录必须是JSON对象")
    table_id = record.get("id")
    if not isinstance(table_id, str) or not table_id:
        raise ValueError("缺少表格 id")
    headings = record.get("headings")
    if not isinstance(headings, list) or not headings:
        raise ValueError("headings 必须是非空列表")
    headings = [str(h) for h in headings]
    rows = []
    for raw_row in record.get("rows", []):
        if not isinstance(raw_row, list):
            raise ValueError("行必须是列表")
        if len(raw_row) > len(headings):
            raise ValueError(f"行宽 {len(raw_row)} 超过列数 {len(headings)}")
        row = [_parse_cell(c) for c in raw_row]
        # 短行用空文本补齐
        row.extend(Cell.text("") for _ in range(len(headings) - len(row)))
        rows.append(row)
    caption = str(record.get("caption", ""))
    page_title = str(record.get("pageTitle", ""))
    if "coreColumn" in record:
        return RelationalTable(
            id=table_id,
            caption=caption,
            page_title=page_title,
            headings=headings,
            rows=rows,
            core_column=int(record["coreColumn"]),
            core_entities=[str(e) for e in record.get("coreEntities", [])],
        )
    return RawTable(table_id, caption, page_title, headings, rows)


def parse_table_corpus(stream: Iterable[str]) -> ParseReport:
    """
    解析逐行JSON格式的表格语料

    Args:
        stream: 行迭代器（打开的文件或字符串列表）

    Returns:
        解析报告，items 为原始表格列表，errors 为 (行号, 错误信息)
    """
    report = ParseReport()
    for line_number, line in _iter_lines(stream):
        if not line.strip():
            continue
        try:
            report.items.append(table_from_record(json.loads(line)))
        except (ValueError, TypeError, KeyError) as e:
            report.errors.append((line_number, str(e)))
            logger.warning("跳过第 %d 行表格记录: %s", line_number, e)
    return report


def parse_kb_dump(stream: Iterable[str]) -> ParseReport:
    """
    解析逐行JSON格式的知识库，重复的实体以后出现的记录为准

    Args:
        stream: 行迭代器

    Returns:
        解析报告，items 为单个字典 {实体id: Entity}
    """
    report = ParseReport()
    store: Dict[str, Entity] = {}
    for line_number, line in _iter_lines(stream):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            entity = entity_from_record(record)
        except (ValueError, TypeError, KeyError) as e:
            report.errors.append((line_number, str(e)))
            logger.warning("跳过第 %d 行知识库记录: %s", line_number, e)
            continue
        if entity.id in store:
            message = f"实体 {entity.id} 重复出现（第 {line_number} 行），以后者为准"
            report.warnings.append(message)
            logger.warning(message)
        store[entity.id] = entity
    report.items = [store]
    return report


def entity_from_record(record: Mapping[str, Any]) -> Entity:
    if not isinstance(record, dict):
        raise ValueError("记录必须是JSON对象")
    entity_id = record.get("id")
    if not isinstance(entity_id, str) or not entity_id:
        raise ValueError("缺少实体 id")
    raw_properties = record.get("properties") or {}
    if not isinstance(raw_properties, dict):
        raise ValueError("properties 必须是对象")
    properties: Dict[str, List[str]] = {}
    for label, values in raw_properties.items():
        if isinstance(values, list):
            properties[str(label)] = [str(v) for v in values]
        else:
            properties[str(label)] = [str(values)]
    return Entity(entity_id, str(record.get("description", "")), properties)


def link_cells(table: RawTable, kb: Mapping[str, Entity]) -> RawTable:
    """
    将无法在知识库中解析的实体链接降级为文本（有锚文本时使用锚文本）

    Args:
        table: 原始表格
        kb: 实体存储

    Returns:
        新的原始表格
    """
    rows = []
    for row in table.rows:
        linked = []
        for cell in row:
            if cell.is_entity and cell.value not in kb:
                linked.append(Cell.text(cell.anchor or cell.value))
            else:
                linked.append(cell)
        rows.append(linked)
    return RawTable(table.id, table.caption, table.page_title, list(table.headings), rows)


def detect_core_column(table: RawTable) -> Optional[int]:
    """
    识别核心列：实体数最多的列，并列时取最左列，且至少包含两个实体

    Args:
        table: 原始表格

    Returns:
        核心列下标，不存在时返回None
    """
    best_index, best_count = None, 0
    for index in range(table.n_columns):
        count = sum(1 for cell in table.column(index) if cell.is_entity)
        if count > best_count:
            best_index, best_count = index, count
    if best_count < 2:
        return None
    return best_index


def classify_relational(table: RawTable) -> bool:
    """
    判断表格是否为关系表：至少两行两列且存在核心列

    Args:
        table: 原始表格

    Returns:
        是否为关系表
    """
    if table.n_rows < 2 or table.n_columns < 2:
        return False
    return detect_core_column(table) is not None


def to_relational(table: RawTable) -> Optional[RelationalTable]:
    """
    将原始表格转换为关系表，非关系表返回None

    Args:
        table: 原始表格

    Returns:
        关系表或None
    """
    if not classify_relational(table):
        return None
    core = detect_core_column(table)
    core_entities: List[str] = []
    for cell in table.column(core):
        if cell.is_entity and cell.value not in core_entities:
            core_entities.append(cell.value)
    return RelationalTable(
        id=table.id,
        caption=table.caption,
        page_title=table.page_title,
        headings=list(table.headings),
        rows=[list(r) for r in table.rows],
        core_column=core,
        core_entities=core_entities,
    )


def entity_representation(
    entity: Entity, representation: str, analyzer: Analyzer = DEFAULT_ANALYZER
) -> List[str]:
    """
    获取实体的某种文本表示的词项序列

    Args:
        entity: 实体
        representation: all / description / properties
        analyzer: 文本分析器

    Returns:
        词项列表
    """
    if representation == "all":
        return analyzer.analyze(entity.catchall)
    if representation == "description":
        return analyzer.analyze(entity.description)
    if representation == "properties":
        return analyzer.analyze(entity.properties_text())
    raise ValueError(f"未知的实体表示: {representation}")


class TableCorpus:
    """关系表语料，构建后只读"""

    def __init__(self, tables: Iterable[RelationalTable], non_relational: int = 0):
        self.tables: Dict[str, RelationalTable] = {}
        for table in sorted(tables, key=lambda t: t.id):
            if table.id in self.tables:
                logger.warning("表格 %s 重复出现，以后者为准", table.id)
            self.tables[table.id] = table
        self.non_relational = non_relational
        self._tables_by_entity: Dict[str, List[str]] = defaultdict(list)
        for table in self.tables.values():
            for entity_id in table.core_entities:
                self._tables_by_entity[entity_id].append(table.id)

    def __len__(self) -> int:
        return len(self.tables)

    def get(self, table_id: str) -> RelationalTable:
        return self.tables[table_id]

    def tables_with_core_entity(self, entity_id: str) -> List[str]:
        """
        获取核心列中包含给定实体的表格

        Args:
            entity_id: 实体标识

        Returns:
            表格id列表（按id排序）
        """
        return self._tables_by_entity.get(entity_id, [])

    def table_text(self, table_id: str) -> str:
        """用于BM25索引的表格文本：标题、页面标题、列名和所有单元格，实体单元格优先用锚文本"""
        table = self.tables[table_id]
        parts = [table.caption, table.page_title] + list(table.headings)
        for row in table.rows:
            parts.extend(cell.anchor or cell.value for cell in row if not cell.is_empty)
        return " ".join(p for p in parts if p)

    @classmethod
    def ingest(cls, raw_tables: Iterable[RawTable], kb: Mapping[str, Entity]) -> "TableCorpus":
        """
        链接单元格并识别关系表，非关系表只计数

        Args:
            raw_tables: 原始表格
            kb: 实体存储

        Returns:
            关系表语料
        """
        relational = []
        non_relational = 0
        for raw in raw_tables:
            table = to_relational(link_cells(raw, kb))
            if table is None:
                non_relational += 1
            else:
                relational.append(table)
        logger.info("关系表 %d 个，非关系表 %d 个", len(relational), non_relational)
        return cls(relational, non_relational)
