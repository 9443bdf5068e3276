import hashlib
import json
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Mapping, Optional, Tuple

from .analyzer import DEFAULT_ANALYZER, Analyzer
from .corpus import (
    Entity,
    ParseReport,
    RelationalTable,
    TableCorpus,
    entity_from_record,
    entity_representation,
    parse_kb_dump,
    parse_table_corpus,
    table_from_record,
)
from .errors import CorruptArtifactError, InputError
from .schema_norm import SynonymSets, build_synonym_sets, read_overrides
from .text_index import InvertedIndex
from .value_lookup import FactCatalog, FactQuadruple, build_catalog

logger = logging.getLogger(__name__)

BUNDLE_FORMAT = "tabgen"
BUNDLE_VERSION = 1
MANIFEST_FILE = "manifest.json"
ARTIFACTS = ("corpus", "indexes", "catalog", "synonyms")


@dataclass
class Bundle:
    """构建好的全部只读数据：语料、知识库、索引、事实目录和同义词组"""

    corpus: TableCorpus
    kb: Dict[str, Entity]
    entity_index: InvertedIndex
    table_index: InvertedIndex
    catalog: FactCatalog
    synonyms: SynonymSets
    analyzer: Analyzer = DEFAULT_ANALYZER


@dataclass
class BuildReport:
    tables: ParseReport
    kb: ParseReport


def _open_lines(file_path: str, what: str) -> List[str]:
    if not os.path.exists(file_path):
        raise InputError(f"{what}文件不存在: {file_path}")
    try:
        with open(file_path, "r", encoding="utf-8") as f:
            return f.readlines()
    except (OSError, UnicodeDecodeError) as e:
        raise InputError(f"无法读取{what}文件 {file_path}: {e}")


def build_bundle(
    tables_path: str,
    kb_path: str,
    synonym_overrides: Optional[str] = None,
    synonym_threshold: int = 3,
    analyzer: Analyzer = DEFAULT_ANALYZER,
) -> Tuple[Bundle, BuildReport]:
    """
    解析输入并构建索引、事实目录和同义词组

    Args:
        tables_path: tables.jsonl 路径
        kb_path: kb.jsonl 路径
        synonym_overrides: 同义词覆盖文件路径
        synonym_threshold: 同义词共现阈值
        analyzer: 文本分析器

    Returns:
        (数据包, 解析报告)
    """
    kb_report = parse_kb_dump(_open_lines(kb_path, "知识库"))
    table_report = parse_table_corpus(_open_lines(tables_path, "表格语料"))
    if synonym_overrides and not os.path.exists(synonym_overrides):
        raise InputError(f"同义词覆盖文件不存在: {synonym_overrides}")
    kb = kb_report.items[0]
    corpus = TableCorpus.ingest(table_report.items, kb)
    bundle = Bundle(
        corpus=corpus,
        kb=kb,
        entity_index=InvertedIndex.build(
            {e: entity_representation(kb[e], "all", analyzer) for e in kb}
        ),
        table_index=InvertedIndex.build(
            {t: analyzer.analyze(corpus.table_text(t)) for t in corpus.tables}
        ),
        catalog=build_catalog(corpus, kb),
        synonyms=build_synonym_sets(kb, synonym_threshold, read_overrides(synonym_overrides), analyzer),
        analyzer=analyzer,
    )
    return bundle, BuildReport(table_report, kb_report)


def _dumps(record: Any) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False)


class BundleManager:
    """数据包管理器，负责数据包文件和 manifest.json 的读写与校验"""

    def __init__(self, directory_path: str):
        """
        初始化数据包管理器

        Args:
            directory_path: 数据包目录
        """
        self.directory_path = directory_path
        self.manifest_file = os.path.join(directory_path, MANIFEST_FILE)

    def _artifact_path(self, name: str) -> str:
        return os.path.join(self.directory_path, f"{name}.jsonl")

    @staticmethod
    def _header(name: str) -> Dict[str, Any]:
        return {"artifact": name, "format": BUNDLE_FORMAT, "version": BUNDLE_VERSION}

    def _serialize(self, name: str, bundle: Bundle) -> str:
        records: Iterable[Any]
        if name == "corpus":
            records = (
                [{"type": "meta", "non_relational": bundle.corpus.non_relational}]
                + [{"type": "entity", **bundle.kb[e].to_record()} for e in sorted(bundle.kb)]
                + [{"type": "table", **t.to_record()} for t in bundle.corpus.tables.values()]
            )
        elif name == "indexes":
            records = [
                {"name": "analyzer", "stopwords": sorted(bundle.analyzer.stopwords)},
                {"name": "entity", "index": bundle.entity_index.to_record()},
                {"name": "table", "index": bundle.table_index.to_record()},
            ]
        elif name == "catalog":
            records = [quad.to_record() for quad in bundle.catalog]
        else:
            records = [{"group": group} for group in bundle.synonyms.to_records()]
        lines = [_dumps(self._header(name))] + [_dumps(r) for r in records]
        return "\n".join(lines) + "\n"

    def save(self, bundle: Bundle) -> Dict[str, Any]:
        """
        写出全部数据包文件和 manifest.json

        Args:
            bundle: 数据包

        Returns:
            manifest 内容
        """
        os.makedirs(self.directory_path, exist_ok=True)
        entries = []
        for name in ARTIFACTS:
            content = self._serialize(name, bundle)
            data = content.encode("utf-8")
            with open(self._artifact_path(name), "wb") as f:
                f.write(data)
            entries.append(
                {
                    "name": name,
                    "file": f"{name}.jsonl",
                    "version": BUNDLE_VERSION,
                    "md5": hashlib.md5(data).hexdigest(),
                }
            )
        manifest = {"format": BUNDLE_FORMAT, "version": BUNDLE_VERSION, "artifacts": entries}
        try:
            with open(self.manifest_file, "w", encoding="utf-8") as f:
                json.dump(manifest, f, indent=2, sort_keys=True)
                f.write("\n")
        except OSError as e:
            raise InputError(f"无法保存 manifest 文件: {e}")
        return manifest

    def read_manifest(self) -> Dict[str, Any]:
        """
        读取并校验 manifest.json

        Returns:
            manifest 内容
        """
        if not os.path.isdir(self.directory_path):
            raise InputError(f"数据包目录不存在: {self.directory_path}")
        if not os.path.exists(self.manifest_file):
            raise CorruptArtifactError(f"数据包缺少 {MANIFEST_FILE}: {self.directory_path}")
        try:
            with open(self.manifest_file, "r", encoding="utf-8") as f:
                manifest = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise CorruptArtifactError(f"无法解析 {MANIFEST_FILE}: {e}")
        if manifest.get("format") != BUNDLE_FORMAT or manifest.get("version") != BUNDLE_VERSION:
            raise CorruptArtifactError(f"不支持的数据包版本: {manifest.get('version')}")
        names = [entry.get("name") for entry in manifest.get("artifacts", [])]
        if sorted(names) != sorted(ARTIFACTS):
            raise CorruptArtifactError(f"manifest 中的文件列表不完整: {names}")
        return manifest

    def _read_artifact(self, entry: Mapping[str, Any]) -> List[Dict[str, Any]]:
        name = entry["name"]
        path = os.path.join(self.directory_path, entry["file"])
        if not os.path.exists(path):
            raise CorruptArtifactError(f"数据包文件缺失: {path}")
        with open(path, "rb") as f:
            data = f.read()
        if hashlib.md5(data).hexdigest() != entry.get("md5"):
            raise CorruptArtifactError(f"数据包文件哈希不一致: {path}")
        try:
            lines = [json.loads(line) for line in data.decode("utf-8").splitlines() if line.strip()]
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CorruptArtifactError(f"数据包文件内容损坏 {path}: {e}")
        if not lines or lines[0] != self._header(name):
            raise CorruptArtifactError(f"数据包文件头不匹配: {path}")
        return lines[1:]

    def load(self) -> Bundle:
        """
        加载并校验数据包

        Returns:
            数据包
        """
        manifest = self.read_manifest()
        records = {entry["name"]: self._read_artifact(entry) for entry in manifest["artifacts"]}
        try:
            return self._assemble(records)
        except (KeyError, TypeError, ValueError) as e:
            raise CorruptArtifactError(f"数据包内容损坏: {e}")

    @staticmethod
    def _assemble(records: Mapping[str, List[Dict[str, Any]]]) -> Bundle:
        kb: Dict[str, Entity] = {}
        tables: List[RelationalTable] = []
        non_relational = 0
        for record in records["corpus"]:
            kind = record.pop("type")
            if kind == "meta":
                non_relational = int(record["non_relational"])
            elif kind == "entity":
                entity = entity_from_record(record)
                kb[entity.id] = entity
            else:
                table = table_from_record(record)
                if not isinstance(table, RelationalTable):
                    raise ValueError(f"表格 {table.id} 缺少核心列")
                tables.append(table)
        indexes = {r["name"]: r for r in records["indexes"]}
        return Bundle(
            corpus=TableCorpus(tables, non_relational),
            kb=kb,
            entity_index=InvertedIndex.from_record(indexes["entity"]["index"]),
            table_index=InvertedIndex.from_record(indexes["table"]["index"]),
            catalog=FactCatalog.from_quadruples(FactQuadruple.from_record(r) for r in records["catalog"]),
            synonyms=SynonymSets.from_groups(r["group"] for r in records["synonyms"]),
            analyzer=Analyzer(indexes["analyzer"]["stopwords"]),
        )
