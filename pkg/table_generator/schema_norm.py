"""列名归一化：编辑距离相似度与谓词同义词组"""

import functools
import logging
import os
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Set, Tuple

import jellyfish

from .analyzer import DEFAULT_ANALYZER, Analyzer
from .corpus import Entity

logger = logging.getLogger(__name__)

# 列名归一化与编辑相似度缓存的容量，批量生成时多个线程共享同一个匹配器
LABEL_CACHE_SIZE = 65536


def normalize_label(label: str, analyzer: Analyzer = DEFAULT_ANALYZER) -> str:
    """
    列名归一化：小写、去停用词、合并空白

    Args:
        label: 原始列名
        analyzer: 文本分析器

    Returns:
        归一化后的列名
    """
    return " ".join(analyzer.analyze(label))


def edit_similarity(a: str, b: str, analyzer: Analyzer = DEFAULT_ANALYZER) -> float:
    """
    归一化编辑相似度 1 - Levenshtein(a', b') / max(|a'|, |b'|)

    Args:
        a: 列名
        b: 列名
        analyzer: 文本分析器

    Returns:
        [0,1] 之间的相似度，两者归一化后都为空时为1
    """
    return _normalized_similarity(normalize_label(a, analyzer), normalize_label(b, analyzer))


@functools.lru_cache(maxsize=LABEL_CACHE_SIZE)
def _normalized_similarity(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - jellyfish.levenshtein_distance(a, b) / longest


@dataclass
class SynonymSets:
    """谓词同义词组，键为归一化后的列名"""

    groups: List[FrozenSet[str]] = field(default_factory=list)
    canonical_map: Dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_groups(cls, groups: Iterable[Iterable[str]]) -> "SynonymSets":
        frozen = sorted(
            (frozenset(g) for g in groups if len(set(g)) > 1), key=lambda g: sorted(g)
        )
        canonical_map = {}
        for group in frozen:
            representative = min(group)
            for label in group:
                if label in canonical_map:
                    raise ValueError(f"同义词组不能相交: {label}")
                canonical_map[label] = representative
        return cls(frozen, canonical_map)

    def canonical(self, normalized_label: str) -> str:
        return self.canonical_map.get(normalized_label, normalized_label)

    def to_records(self) -> List[List[str]]:
        return [sorted(g) for g in self.groups]


def read_overrides(file_path: Optional[str]) -> List[Tuple[str, str, str]]:
    """
    读取同义词覆盖文件，每行 "allow<TAB>A<TAB>B" 或 "deny<TAB>A<TAB>B"，#开头为注释

    Args:
        file_path: 覆盖文件路径

    Returns:
        (动作, 列名A, 列名B) 列表
    """
    overrides = []
    if not file_path or not os.path.exists(file_path):
        return overrides
    with open(file_path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[0] not in ("allow", "deny"):
                logger.warning("同义词覆盖文件第 %d 行格式错误，已忽略: %s", line_number, line)
                continue
            overrides.append((parts[0], parts[1], parts[2]))
    return overrides


class _UnionFind:
    def __init__(self):
        self.parent: Dict[str, str] = {}

    def find(self, x: str) -> str:
        self.parent.setdefault(x, x)
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def build_synonym_sets(
    kb: Mapping[str, Entity],
    threshold: int = 3,
    overrides: Iterable[Tuple[str, str, str]] = (),
    analyzer: Analyzer = DEFAULT_ANALYZER,
) -> SynonymSets:
    """
    连接相同主语和宾语的谓词视为同义词：两个属性在至少 threshold 个不同的
    (实体, 取值) 上同时出现时归为一组，传递闭包后再应用覆盖文件

    Args:
        kb: 实体存储
        threshold: 共现次数阈值 T
        overrides: (allow|deny, A, B) 覆盖列表
        analyzer: 文本分析器

    Returns:
        同义词组
    """
    co_occurrence: Dict[Tuple[str, str], int] = defaultdict(int)
    for entity_id in sorted(kb):
        labels_by_value: Dict[str, Set[str]] = defaultdict(set)
        for label, values in kb[entity_id].properties.items():
            normalized = normalize_label(label, analyzer)
            if not normalized:
                continue
            for value in values:
                labels_by_value[value.strip().lower()].add(normalized)
        seen: Set[Tuple[str, str, str]] = set()
        for value, labels in labels_by_value.items():
            for a, b in combinations(sorted(labels), 2):
                if (a, b, value) not in seen:
                    seen.add((a, b, value))
                    co_occurrence[(a, b)] += 1

    edges = {pair for pair, count in co_occurrence.items() if count >= threshold}
    denied: Set[Tuple[str, str]] = set()
    for action, a, b in overrides:
        pair = tuple(sorted((normalize_label(a, analyzer), normalize_label(b, analyzer))))
        if not pair[0] or not pair[1] or pair[0] == pair[1]:
            continue
        if action == "allow":
            edges.add(pair)
        else:
            denied.add(pair)
            edges.discard(pair)

    union_find = _UnionFind()
    members: Dict[str, Set[str]] = {}
    for a, b in sorted(edges):
        ra, rb = union_find.find(a), union_find.find(b)
        group_a = members.get(ra, {a})
        group_b = members.get(rb, {b})
        if ra == rb:
            continue
        # 合并后不能让被否决的两个列名落在同一组
        if any(tuple(sorted((x, y))) in denied for x in group_a for y in group_b):
            logger.debug("同义词合并 %s / %s 被覆盖文件阻止", a, b)
            continue
        union_find.union(a, b)
        root = union_find.find(a)
        members.pop(ra, None)
        members.pop(rb, None)
        members[root] = group_a | group_b
    return SynonymSets.from_groups(members.values())


class SchemaNormalizer:
    """列名匹配器：同义词组或编辑相似度超过阈值即视为同一列名"""

    def __init__(
        self,
        synonyms: Optional[SynonymSets] = None,
        delta: float = 0.8,
        analyzer: Analyzer = DEFAULT_ANALYZER,
    ):
        """
        初始化列名匹配器

        Args:
            synonyms: 同义词组
            delta: 编辑相似度阈值
            analyzer: 文本分析器
        """
        if not 0.0 <= delta <= 1.0:
            raise ValueError(f"delta 必须在 [0,1] 之间: {delta}")
        self.synonyms = synonyms or SynonymSets()
        self.delta = delta
        self.analyzer = analyzer
        self._normalize = functools.lru_cache(maxsize=LABEL_CACHE_SIZE)(
            functools.partial(normalize_label, analyzer=analyzer)
        )

    def normalize(self, label: str) -> str:
        return self._normalize(label)

    def cache_info(self) -> "functools._CacheInfo":
        """归一化缓存的命中统计"""
        return self._normalize.cache_info()

    def canonical(self, label: str) -> str:
        return self.synonyms.canonical(self.normalize(label))

    def similarity(self, a: str, b: str) -> float:
        """带缓存的编辑相似度"""
        na, nb = self.normalize(a), self.normalize(b)
        key = (na, nb) if na <= nb else (nb, na)
        return _normalized_similarity(*key)

    def labels_match(self, s: str, s2: str, delta: Optional[float] = None) -> bool:
        """
        判断两个列名是否视为相同

        Args:
            s: 列名
            s2: 列名
            delta: 阈值，为None时使用初始化时的阈值

        Returns:
            同属一个同义词组或编辑相似度不小于阈值时为True
        """
        threshold = self.delta if delta is None else delta
        if self.canonical(s) == self.canonical(s2):
            return True
        return self.similarity(s, s2) >= threshold

    def best_match(self, s: str, candidates: Iterable[str]) -> Optional[int]:
        """
        在候选列名中找与s最匹配的一个

        Args:
            s: 列名
            candidates: 候选列名序列

        Returns:
            匹配的候选下标（相似度最高，并列取最小下标），没有匹配时为None
        """
        best_index, best_score = None, -1.0
        for index, candidate in enumerate(candidates):
            if not self.labels_match(s, candidate):
                continue
            score = 1.0 if self.canonical(s) == self.canonical(candidate) else self.similarity(s, candidate)
            if score > best_score:
                best_index, best_score = index, score
        return best_index
