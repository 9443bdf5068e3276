from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class RankedList:
    """按得分降序排列的候选列表，同分按标识升序"""

    items: Tuple[Tuple[str, float], ...] = field(default_factory=tuple)

    @classmethod
    def from_scores(cls, scores: Iterable[Tuple[str, float]]) -> "RankedList":
        ordered = sorted(scores, key=lambda item: (-item[1], item[0]))
        return cls(tuple((key, float(value)) for key, value in ordered))

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def ids(self) -> List[str]:
        return [key for key, _ in self.items]

    def scores(self) -> Dict[str, float]:
        return dict(self.items)

    def top(self, k: int) -> "RankedList":
        return RankedList(self.items[:k])

    def to_records(self, key_name: str = "id") -> List[Dict]:
        return [{key_name: key, "score": value} for key, value in self.items]


def minmax_normalize(values: Sequence[float], constant: float = 0.0) -> np.ndarray:
    """
    查询内min-max归一化到[0,1]

    Args:
        values: 原始取值
        constant: 所有取值相同时的填充值

    Returns:
        归一化后的数组
    """
    array = np.asarray(values, dtype=float)
    if array.size == 0:
        return array
    low, high = array.min(), array.max()
    if high - low <= 0:
        return np.full(array.shape, constant, dtype=float)
    return (array - low) / (high - low)


def normalize_columns(features: np.ndarray) -> np.ndarray:
    """对候选×特征矩阵逐列做min-max归一化，常数列置0"""
    if features.size == 0:
        return features.astype(float)
    return np.column_stack(
        [minmax_normalize(features[:, j]) for j in range(features.shape[1])]
    )


def combine_features(
    ids: Sequence[str], normalized: np.ndarray, weights: Sequence[float]
) -> RankedList:
    """
    线性组合归一化特征并排序

    Args:
        ids: 候选标识
        normalized: 候选×特征的归一化矩阵
        weights: 特征权重

    Returns:
        排序后的候选列表
    """
    weights = np.asarray(weights, dtype=float)
    if normalized.size and normalized.shape[1] != weights.size:
        raise ValueError(f"权重数量 {weights.size} 与特征数量 {normalized.shape[1]} 不一致")
    if not len(ids):
        return RankedList()
    scores = normalized @ weights
    return RankedList.from_scores(zip(ids, scores.tolist()))
