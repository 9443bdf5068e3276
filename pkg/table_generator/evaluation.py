"""检索评测：TREC格式读写、NDCG/MAP/MRR、逐轮评测、权重学习与提升/下降统计"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import EmptyWorkError, InputError
from .ranking import RankedList

logger = logging.getLogger(__name__)

Qrels = Dict[str, Dict[str, int]]
Run = Dict[str, List[Tuple[str, float]]]

DEFAULT_METRICS = ("ndcg@5", "ndcg@10", "map", "mrr")
TOLERANCE = 1e-12


def parse_qrels(lines: Iterable[str]) -> Qrels:
    """
    解析qrels，每行 "qid 0 itemid rel"

    Args:
        lines: 行迭代器

    Returns:
        查询编号到 {条目: 相关度} 的映射
    """
    qrels: Qrels = {}
    for line_number, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) != 4:
            raise InputError(f"qrels 第 {line_number} 行应有4列: {line.strip()}")
        try:
            grade = int(parts[3])
        except ValueError:
            raise InputError(f"qrels 第 {line_number} 行相关度不是整数: {parts[3]}")
        if grade < 0:
            raise InputError(f"qrels 第 {line_number} 行相关度为负数: {grade}")
        qrels.setdefault(parts[0], {})[parts[2]] = grade
    return qrels


def parse_run(lines: Iterable[str]) -> Run:
    """
    解析run文件，每行 "qid Q0 itemid rank score tag"，按rank排序

    Args:
        lines: 行迭代器

    Returns:
        查询编号到有序 (条目, 得分) 列表的映射
    """
    entries: Dict[str, List[Tuple[int, int, str, float]]] = {}
    for line_number, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if len(parts) != 6:
            raise InputError(f"run 文件第 {line_number} 行应有6列: {line.strip()}")
        try:
            rank, value = int(parts[3]), float(parts[4])
        except ValueError:
            raise InputError(f"run 文件第 {line_number} 行名次或得分非法: {line.strip()}")
        entries.setdefault(parts[0], []).append((rank, line_number, parts[2], value))
    return {
        qid: [(item, value) for _, _, item, value in sorted(rows)]
        for qid, rows in entries.items()
    }


def parse_queries(lines: Iterable[str]) -> List[Tuple[str, str]]:
    """
    解析查询文件，每行 "qid<TAB>query text"

    Args:
        lines: 行迭代器

    Returns:
        (查询编号, 查询文本) 列表，保持文件顺序
    """
    queries = []
    for line_number, line in enumerate(lines, start=1):
        line = line.rstrip("\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t", 1)
        if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
            raise InputError(f"查询文件第 {line_number} 行格式错误: {line}")
        queries.append((parts[0].strip(), parts[1].strip()))
    return queries


def read_file_lines(file_path: str, what: str) -> List[str]:
    if not os.path.exists(file_path):
        raise InputError(f"{what}文件不存在: {file_path}")
    with open(file_path, "r", encoding="utf-8") as f:
        return f.readlines()


def format_run(runs: Mapping[str, RankedList], tag: str) -> str:
    """将每个查询的排序结果格式化为TREC run文本"""
    lines = []
    for qid in sorted(runs):
        for rank, (item, value) in enumerate(runs[qid], start=1):
            lines.append(f"{qid} Q0 {_key(item)} {rank} {value!r} {tag}")
    return "\n".join(lines) + ("\n" if lines else "")


@dataclass
class MetricResult:
    """单个指标的逐查询取值和平均值，flagged 为没有相关条目的查询"""

    per_query: Dict[str, float] = field(default_factory=dict)
    flagged: List[str] = field(default_factory=list)

    @property
    def mean(self) -> float:
        if not self.per_query:
            return 0.0
        return sum(self.per_query.values()) / len(self.per_query)


def _judged_queries(run: Run, qrels: Qrels) -> List[str]:
    judged = []
    for qid in sorted(run):
        if qid not in qrels:
            logger.warning("查询 %s 没有相关性判断，已跳过", qid)
            continue
        judged.append(qid)
    if not judged:
        logger.warning("run 中没有可评测的查询")
    return judged


def _key(item: str) -> str:
    """run文件中的条目不能含空格，比较时统一用下划线"""
    return item.replace(" ", "_")


def _judgments(qrels: Qrels, qid: str) -> Dict[str, int]:
    return {_key(item): grade for item, grade in qrels[qid].items()}


def _dcg(grades: Sequence[int]) -> float:
    return sum((2 ** g - 1) / math.log2(rank + 1) for rank, g in enumerate(grades, start=1))


def ndcg_at_k(run: Run, qrels: Qrels, k: int) -> MetricResult:
    """
    NDCG@k，增益为 2^rel - 1，折扣为 log2(rank+1)

    Args:
        run: 排序结果
        qrels: 相关性判断
        k: 截断位置

    Returns:
        指标结果，所有相关度为0的查询记0分并标记
    """
    if k < 1:
        raise ValueError(f"k 必须不小于1: {k}")
    result = MetricResult()
    for qid in _judged_queries(run, qrels):
        judgments = _judgments(qrels, qid)
        ideal = _dcg(sorted(judgments.values(), reverse=True)[:k])
        if ideal <= 0:
            result.per_query[qid] = 0.0
            result.flagged.append(qid)
            continue
        gains = [judgments.get(_key(item), 0) for item, _ in run[qid][:k]]
        result.per_query[qid] = _dcg(gains) / ideal
    return result


def map_mrr(run: Run, qrels: Qrels) -> Tuple[MetricResult, MetricResult]:
    """
    平均准确率均值和倒数排名均值，相关度不小于1视为相关

    Args:
        run: 排序结果
        qrels: 相关性判断

    Returns:
        (MAP, MRR)
    """
    average_precision, reciprocal_rank = MetricResult(), MetricResult()
    for qid in _judged_queries(run, qrels):
        relevant = {item for item, grade in _judgments(qrels, qid).items() if grade >= 1}
        if not relevant:
            average_precision.flagged.append(qid)
            reciprocal_rank.flagged.append(qid)
        hits, precision_sum, first = 0, 0.0, 0.0
        for rank, (item, _) in enumerate(run[qid], start=1):
            if _key(item) in relevant:
                hits += 1
                precision_sum += hits / rank
                if not first:
                    first = 1.0 / rank
        average_precision.per_query[qid] = precision_sum / len(relevant) if relevant else 0.0
        reciprocal_rank.per_query[qid] = first
    return average_precision, reciprocal_rank


def evaluate_run(
    run: Run, qrels: Qrels, metrics: Sequence[str] = DEFAULT_METRICS
) -> Dict[str, MetricResult]:
    """
    按名称计算一组指标

    Args:
        run: 排序结果
        qrels: 相关性判断
        metrics: 指标名称，支持 ndcg@k / map / mrr

    Returns:
        指标名到结果的映射
    """
    results: Dict[str, MetricResult] = {}
    for name in metrics:
        name = name.strip().lower()
        if name.startswith("ndcg@"):
            try:
                k = int(name[len("ndcg@"):])
            except ValueError:
                raise InputError(f"未知的指标: {name}")
            results[name] = ndcg_at_k(run, qrels, k)
        elif name in ("map", "mrr"):
            average_precision, reciprocal_rank = map_mrr(run, qrels)
            results[name] = average_precision if name == "map" else reciprocal_rank
        else:
            raise InputError(f"未知的指标: {name}")
    return results


def fit_ols(features: np.ndarray, labels: np.ndarray, ridge: float = 1e-6) -> np.ndarray:
    """无截距的最小二乘（带微小岭正则）：w = (XᵀX + εI)⁻¹ Xᵀy"""
    gram = features.T @ features + ridge * np.eye(features.shape[1])
    return np.linalg.solve(gram, features.T @ labels)


@dataclass
class WeightFit:
    """交叉验证的权重学习结果"""

    weights: np.ndarray
    fold_weights: List[np.ndarray]
    predictions: np.ndarray


def learn_weights(
    features: np.ndarray,
    labels: Sequence[float],
    groups: Optional[Sequence[str]] = None,
    folds: int = 5,
    ridge: float = 1e-6,
    seed: int = 42,
) -> WeightFit:
    """
    k折交叉验证学习线性特征权重，同一查询的样本落在同一折

    Args:
        features: 样本×特征矩阵（来自固定的一轮）
        labels: 相关度
        groups: 每个样本所属的查询，为None时每个样本单独成组
        folds: 折数
        ridge: 岭正则系数
        seed: 分折种子

    Returns:
        各折权重的平均值、每折权重和折外预测
    """
    if folds < 2:
        raise ValueError(f"folds 必须不小于2: {folds}")
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if features.ndim != 2 or features.shape[0] != labels.size:
        raise ValueError("特征矩阵与标签数量不一致")
    if groups is None:
        groups = [str(i) for i in range(labels.size)]
    unique = sorted(set(groups))
    if len(unique) < folds:
        raise ValueError(f"查询数量 {len(unique)} 少于折数 {folds}")
    for j in np.flatnonzero(np.ptp(features, axis=0) == 0):
        logger.warning("第 %d 个特征为常数列，其系数将接近0或与其他特征共线", j + 1)

    permuted = np.random.default_rng(seed).permutation(len(unique))
    fold_of = {}
    for fold, indices in enumerate(np.array_split(permuted, folds)):
        for index in indices:
            fold_of[unique[index]] = fold
    assignment = np.array([fold_of[g] for g in groups])

    fold_weights: List[np.ndarray] = []
    predictions = np.zeros(labels.size)
    for fold in range(folds):
        test = assignment == fold
        weights = fit_ols(features[~test], labels[~test], ridge)
        fold_weights.append(weights)
        predictions[test] = features[test] @ weights
    return WeightFit(np.mean(fold_weights, axis=0), fold_weights, predictions)


def feature_importance(weights: Sequence[float], names: Sequence[str]) -> List[Tuple[str, float]]:
    """按交叉验证平均系数从大到小排列特征"""
    if len(weights) != len(names):
        raise ValueError("权重数量与特征名称数量不一致")
    return sorted(zip(names, (float(w) for w in weights)), key=lambda item: (-item[1], item[0]))


def feature_rows(
    features: Mapping[str, Tuple[Sequence[str], np.ndarray]], qrels: Qrels
) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """
    把每个查询的候选特征与相关度对齐，作为 learn_weights 的输入

    Args:
        features: 查询编号到 (候选列表, 候选×特征矩阵) 的映射
        qrels: 相关性判断，未判断的候选相关度记为0

    Returns:
        (特征矩阵, 相关度, 每行所属的查询编号)
    """
    blocks: List[np.ndarray] = []
    labels: List[float] = []
    groups: List[str] = []
    for qid in sorted(features):
        if qid not in qrels:
            logger.warning("查询 %s 没有相关性判断，不参与权重学习", qid)
            continue
        items, matrix = features[qid]
        if not len(items):
            continue
        judgments = _judgments(qrels, qid)
        blocks.append(np.asarray(matrix, dtype=float))
        labels.extend(float(judgments.get(_key(item), 0)) for item in items)
        groups.extend([qid] * len(items))
    if not blocks:
        raise EmptyWorkError("没有任何带相关性判断的候选，无法学习权重")
    return np.vstack(blocks), np.array(labels), groups


def classify_delta(delta: float, threshold: float = 0.05) -> str:
    """ΔNDCG@10 不小于阈值为提升，不大于负阈值为下降，其余为不变"""
    if delta >= threshold - TOLERANCE:
        return "helped"
    if delta <= -threshold + TOLERANCE:
        return "hurt"
    return "unchanged"


@dataclass
class HelpedHurt:
    helped: int
    hurt: int
    unchanged: int
    deltas: Dict[str, float]


def helped_hurt_unchanged(
    run_a: Run, run_b: Run, qrels: Qrels, threshold: float = 0.05, k: int = 10
) -> HelpedHurt:
    """
    比较两个run的逐查询 NDCG@k，统计 run_b 相对 run_a 提升、下降和不变的查询数

    Args:
        run_a: 基线run
        run_b: 新run
        qrels: 相关性判断
        threshold: 判定阈值
        k: NDCG截断位置

    Returns:
        统计结果
    """
    if set(run_a) != set(run_b):
        raise ValueError("两个 run 的查询集合不一致")
    before = ndcg_at_k(run_a, qrels, k).per_query
    after = ndcg_at_k(run_b, qrels, k).per_query
    deltas = {qid: after[qid] - before[qid] for qid in sorted(before)}
    counts = {"helped": 0, "hurt": 0, "unchanged": 0}
    for delta in deltas.values():
        counts[classify_delta(delta, threshold)] += 1
    return HelpedHurt(counts["helped"], counts["hurt"], counts["unchanged"], deltas)


def round_runs(tables: Sequence) -> Dict[str, Dict[str, Dict[str, RankedList]]]:
    """
    从生成结果中提取每一轮的实体和列名排序

    Args:
        tables: GeneratedTable 列表（需带查询编号）

    Returns:
        {"round0": {"entities": {qid: 排序}, "labels": {...}}, ...}
    """
    runs: Dict[str, Dict[str, Dict[str, RankedList]]] = {}
    for table in tables:
        qid = table.query_id or table.query
        for snapshot in table.snapshots:
            stage = runs.setdefault(f"round{snapshot.round_index}", {"entities": {}, "labels": {}})
            stage["entities"][qid] = snapshot.entities
            stage["labels"][qid] = snapshot.labels
    return runs


def write_round_runs(run_dir: str, tables: Sequence, tag: str = "tabgen") -> List[str]:
    """
    每一轮写出 entities.<round>.run 和 labels.<round>.run

    Returns:
        写出的文件路径
    """
    os.makedirs(run_dir, exist_ok=True)
    written = []
    for stage, subtasks in sorted(round_runs(tables).items()):
        for subtask, runs in sorted(subtasks.items()):
            path = os.path.join(run_dir, f"{subtask}.{stage}.run")
            with open(path, "w", encoding="utf-8") as f:
                f.write(format_run(runs, f"{tag}-{stage}"))
            written.append(path)
    return written


def _as_run(rankings: Mapping[str, RankedList]) -> Run:
    return {qid: list(ranked.items) for qid, ranked in rankings.items()}


def evaluate_rounds(
    generator,
    queries: Sequence[Tuple[str, str]],
    entity_qrels: Qrels,
    label_qrels: Qrels,
    rounds: int = 3,
    k_feedback_values: Sequence[int] = (10,),
    cutoffs: Sequence[int] = (5, 10),
) -> Dict[int, Dict[str, Dict[str, Dict[str, float]]]]:
    """
    对每个反馈截断k评测每一轮以及Oracle的实体排序和列名排序

    Oracle 使用相关度不小于1的标准列名和标准实体作为反馈，缺少标准答案的查询不参与Oracle。

    Args:
        generator: TableGenerator
        queries: (查询编号, 查询文本) 列表
        entity_qrels: 实体相关性判断
        label_qrels: 列名相关性判断
        rounds: 迭代轮数
        k_feedback_values: 需要比较的反馈截断
        cutoffs: NDCG 截断位置

    Returns:
        {k: {"round0"|...|"oracle": {"entities"|"labels": {"ndcg@5": 平均值, ...}}}}
    """
    results: Dict[int, Dict[str, Dict[str, Dict[str, float]]]] = {}
    for k_feedback in k_feedback_values:
        tables = [
            generator.generate_table(query, rounds=rounds, k_feedback=k_feedback, query_id=qid)
            for qid, query in queries
        ]
        stages = round_runs(tables)
        oracle: Dict[str, Dict[str, RankedList]] = {"entities": {}, "labels": {}}
        for qid, query in queries:
            truth_labels = [s for s, g in sorted(label_qrels.get(qid, {}).items()) if g >= 1]
            truth_entities = [e for e, g in sorted(entity_qrels.get(qid, {}).items()) if g >= 1]
            if not truth_labels or not truth_entities:
                logger.warning("查询 %s 缺少标准答案，不参与 Oracle", qid)
                continue
            table = generator.generate_table_oracle(query, truth_labels, truth_entities, query_id=qid)
            oracle["entities"][qid] = table.entities
            oracle["labels"][qid] = table.labels
        stages["oracle"] = oracle

        report: Dict[str, Dict[str, Dict[str, float]]] = {}
        for stage, subtasks in stages.items():
            report[stage] = {}
            for subtask, qrels in (("entities", entity_qrels), ("labels", label_qrels)):
                run = _as_run(subtasks[subtask])
                report[stage][subtask] = {
                    f"ndcg@{c}": ndcg_at_k(run, qrels, c).mean for c in cutoffs
                }
        results[k_feedback] = report
    return results
