"""DRRM_TKS 深度语义匹配：匹配矩阵、top-k 信号、前馈打分器、训练与训练样本生成"""

import copy
import csv
import functools
import hashlib
import json
import logging
import math
import os
from collections import defaultdict
from dataclasses import dataclass
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .analyzer import DEFAULT_ANALYZER, Analyzer
from .corpus import Entity, TableCorpus, entity_representation
from .errors import CorruptArtifactError, EmptyWorkError, InputError

logger = logging.getLogger(__name__)

MODEL_ARTIFACT = "drrm-tks"
MODEL_VERSION = 2

# 模型文件以JSON保存，float64 可以无损往返
DTYPE = torch.float64

Tokens = Tuple[str, ...]


@functools.lru_cache(maxsize=65536)
def _oov_vector(term: str, dim: int) -> torch.Tensor:
    """未登录词：以词项md5为种子生成的确定性随机单位向量"""
    seed = int(hashlib.md5(term.encode("utf-8")).hexdigest()[:16], 16)
    vector = np.random.default_rng(seed).standard_normal(dim)
    return torch.from_numpy(vector / np.linalg.norm(vector))


def _normalize_rows(matrix: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return matrix / norms


class EmbeddingTable:
    """词向量表，模型训练前的初始向量以及模型文件中的词表"""

    def __init__(
        self,
        terms: Sequence[str],
        weights: Any,
        dim: Optional[int] = None,
        trainable: bool = False,
        normalize: bool = True,
    ):
        """
        初始化词向量表

        Args:
            terms: 词表
            weights: 与词表对应的向量矩阵
            dim: 向量维度，词表为空时必须提供
            trainable: 训练时是否更新向量
            normalize: 是否对向量做L2归一化（从文件恢复时保持原值）
        """
        weights = np.asarray(weights, dtype=float)
        if len(terms) == 0:
            if dim is None:
                raise ValueError("空词表必须指定向量维度")
            weights = np.zeros((0, dim))
        if weights.ndim != 2 or weights.shape[0] != len(terms):
            raise ValueError(f"向量矩阵形状 {weights.shape} 与词表大小 {len(terms)} 不一致")
        self.terms = list(terms)
        self.index = {term: i for i, term in enumerate(self.terms)}
        if len(self.index) != len(self.terms):
            raise ValueError("词表中存在重复词项")
        self.weights = _normalize_rows(weights) if normalize else weights.copy()
        self.dim = weights.shape[1]
        self.trainable = trainable

    @classmethod
    def random(cls, vocabulary: Iterable[str], dim: int = 50, seed: int = 42) -> "EmbeddingTable":
        """随机初始化的可训练词向量表"""
        terms = sorted(set(vocabulary))
        rng = np.random.default_rng(seed)
        return cls(terms, rng.standard_normal((len(terms), dim)), dim=dim, trainable=True)

    @classmethod
    def from_vectors(cls, vectors: Mapping[str, Sequence[float]]) -> "EmbeddingTable":
        """由已有向量构建的只读词向量表，零向量按未登录词处理"""
        terms, rows, dim = [], [], None
        for term in sorted(vectors):
            row = np.asarray(vectors[term], dtype=float)
            if dim is None:
                dim = row.size
            if row.size != dim:
                raise InputError(f"词项 {term} 的向量维度 {row.size} 与 {dim} 不一致")
            if not np.any(row):
                logger.warning("词项 %s 的向量为零向量，按未登录词处理", term)
                continue
            terms.append(term)
            rows.append(row)
        if dim is None:
            raise InputError("词向量为空")
        return cls(terms, np.array(rows) if rows else [], dim=dim, trainable=False)

    @classmethod
    def from_file(cls, file_path: str) -> "EmbeddingTable":
        """
        读取文本格式的词向量文件，每行 "term v1 v2 ... vd"

        Args:
            file_path: 词向量文件路径

        Returns:
            只读词向量表
        """
        if not os.path.exists(file_path):
            raise InputError(f"词向量文件不存在: {file_path}")
        vectors: Dict[str, List[float]] = {}
        with open(file_path, "r", encoding="utf-8") as f:
            for line_number, line in enumerate(f, start=1):
                parts = line.split()
                if not parts:
                    continue
                try:
                    vectors[parts[0]] = [float(x) for x in parts[1:]]
                except ValueError:
                    raise InputError(f"词向量文件第 {line_number} 行格式错误: {file_path}")
                if not vectors[parts[0]]:
                    raise InputError(f"词向量文件第 {line_number} 行缺少向量: {file_path}")
        return cls.from_vectors(vectors)

    @classmethod
    def from_client(cls, client, vocabulary: Iterable[str]) -> "EmbeddingTable":
        """通过 EmbeddingClient 获取词表向量，结果只读"""
        return cls.from_vectors(client.embed_vocabulary(list(vocabulary)))

    @classmethod
    async def async_from_client(cls, client, vocabulary: Iterable[str]) -> "EmbeddingTable":
        """异步版本的 from_client"""
        return cls.from_vectors(await client.async_embed_vocabulary(list(vocabulary)))

    def __len__(self) -> int:
        return len(self.terms)

    def vector(self, term: str) -> torch.Tensor:
        """词项的单位向量"""
        row = self.index.get(term)
        if row is None:
            return _oov_vector(term, self.dim)
        return F.normalize(torch.from_numpy(self.weights[row]), dim=0)

    def unit_vectors(self, tokens: Sequence[str]) -> torch.Tensor:
        return torch.stack([self.vector(t) for t in tokens])

    def to_record(self) -> Dict[str, Any]:
        return {
            "dim": self.dim,
            "trainable": self.trainable,
            "terms": self.terms,
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_record(cls, record: Mapping[str, Any]) -> "EmbeddingTable":
        return cls(
            [str(t) for t in record["terms"]],
            record["weights"],
            dim=int(record["dim"]),
            trainable=bool(record["trainable"]),
            normalize=False,
        )


def matching_matrix(a: Sequence[str], b: Sequence[str], embedding) -> torch.Tensor:
    """
    匹配矩阵 M[i][j] = vec(a_i) · vec(b_j)

    Args:
        a: 词项序列
        b: 词项序列
        embedding: EmbeddingTable 或 DrrmTksModel，提供 unit_vectors

    Returns:
        n×m 矩阵，单位向量下每个元素在 [-1,1] 之间
    """
    if not a or not b:
        raise ValueError("匹配矩阵的输入序列不能为空")
    return embedding.unit_vectors(a) @ embedding.unit_vectors(b).T


def topk_signals(matrix: Any, k: int) -> torch.Tensor:
    """
    取整个矩阵中最强的k个信号（不足时用-1补齐），降序排列后做softmax

    Args:
        matrix: 匹配矩阵
        k: 信号数量

    Returns:
        长度为k、和为1的非增向量
    """
    if k < 1:
        raise ValueError(f"k 必须不小于1: {k}")
    flat = torch.as_tensor(matrix, dtype=DTYPE).reshape(-1)
    selected = torch.topk(flat, min(k, flat.numel())).values
    return torch.softmax(F.pad(selected, (0, k - selected.numel()), value=-1.0), dim=0)


class DrrmTksModel(nn.Module):
    """DRRM_TKS 打分器：词向量 → 匹配矩阵 → top-k 信号 → tanh隐藏层 → 线性输出"""

    def __init__(
        self,
        embedding: EmbeddingTable,
        k_signals: int = 50,
        hidden_layout: Sequence[int] = (50, 20),
    ):
        super().__init__()
        if k_signals < 1:
            raise ValueError(f"k_signals 必须不小于1: {k_signals}")
        self.terms = list(embedding.terms)
        self.index = dict(embedding.index)
        self.dim = embedding.dim
        self.trainable = embedding.trainable
        self.k_signals = k_signals
        self.hidden_layout = tuple(int(width) for width in hidden_layout)
        # 外部词向量（文件或远程）只读
        self.embedding = nn.Embedding.from_pretrained(
            torch.tensor(embedding.weights, dtype=DTYPE), freeze=not embedding.trainable
        )
        sizes = [k_signals, *self.hidden_layout, 1]
        layers: List[nn.Module] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            layers += [nn.Linear(fan_in, fan_out, dtype=DTYPE), nn.Tanh()]
        self.scorer = nn.Sequential(*layers[:-1])

    @classmethod
    def initialize(
        cls,
        embedding: EmbeddingTable,
        k_signals: int = 50,
        hidden_layout: Sequence[int] = (50, 20),
        seed: int = 42,
    ) -> "DrrmTksModel":
        """
        Glorot均匀分布初始化权重，偏置为0

        Args:
            embedding: 词向量表
            k_signals: 保留的信号数量
            hidden_layout: 隐藏层宽度
            seed: 随机种子

        Returns:
            新模型
        """
        model = cls(embedding, k_signals, hidden_layout)
        generator = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for layer in model.linear_layers():
                limit = math.sqrt(6.0 / (layer.in_features + layer.out_features))
                layer.weight.uniform_(-limit, limit, generator=generator)
                layer.bias.zero_()
        return model

    @classmethod
    def zeros(
        cls, embedding: EmbeddingTable, k_signals: int = 50, hidden_layout: Sequence[int] = (50, 20)
    ) -> "DrrmTksModel":
        """所有层参数为0的模型，对任何输入都输出0"""
        model = cls(embedding, k_signals, hidden_layout)
        with torch.no_grad():
            for layer in model.linear_layers():
                layer.weight.zero_()
                layer.bias.zero_()
        return model

    def linear_layers(self) -> List[nn.Linear]:
        return [module for module in self.scorer if isinstance(module, nn.Linear)]

    def unit_vectors(self, tokens: Sequence[str]) -> torch.Tensor:
        """词项序列的单位向量矩阵，词表内的词项经过 nn.Embedding，可以求导"""
        rows = [self.index.get(t, -1) for t in tokens]
        known = [i for i, row in enumerate(rows) if row >= 0]
        vectors: List[Optional[torch.Tensor]] = [None] * len(tokens)
        if known:
            looked_up = self.embedding(torch.tensor([rows[i] for i in known]))
            for position, i in enumerate(known):
                vectors[i] = looked_up[position]
        for i, row in enumerate(rows):
            if row < 0:
                vectors[i] = _oov_vector(tokens[i], self.dim)
        return F.normalize(torch.stack(vectors), dim=1)

    def forward(self, a: Sequence[str], b: Sequence[str]) -> torch.Tensor:
        signals = topk_signals(matching_matrix(a, b, self), self.k_signals)
        return self.scorer(signals).squeeze(-1)


@dataclass(frozen=True)
class MatchScore:
    """匹配得分，degenerate 表示输入为空时返回的0分"""

    value: float
    degenerate: bool = False

    def __float__(self) -> float:
        return self.value


def score(model: DrrmTksModel, a: Sequence[str], b: Sequence[str]) -> MatchScore:
    """
    计算两个词项序列的匹配得分

    Args:
        model: DRRM_TKS 模型
        a: 词项序列
        b: 词项序列

    Returns:
        匹配得分，任一序列为空时为0并标记为退化输入
    """
    if not a or not b:
        return MatchScore(0.0, degenerate=True)
    with torch.no_grad():
        return MatchScore(float(model(a, b)))


@dataclass(frozen=True)
class TrainingPair:
    """带标签的训练样本，label 为 +1 或 -1"""

    query: Tokens
    document: Tokens
    label: int


@dataclass
class TrainingResult:
    model: DrrmTksModel
    losses: List[float]


def build_triples(pairs: Iterable[TrainingPair], rng: np.random.Generator) -> List[Tuple[Tokens, Tokens, Tokens]]:
    """
    为每个正例从同一查询的负例中随机抽取一个，组成 (q, d+, d-) 三元组

    Args:
        pairs: 训练样本
        rng: 随机数生成器

    Returns:
        三元组列表
    """
    groups: Dict[Tokens, Tuple[List[Tokens], List[Tokens]]] = defaultdict(lambda: ([], []))
    for pair in pairs:
        if not pair.query or not pair.document:
            continue
        positives, negatives = groups[pair.query]
        (positives if pair.label > 0 else negatives).append(pair.document)
    triples = []
    for query in sorted(groups):
        positives, negatives = groups[query]
        if not positives or not negatives:
            continue
        for positive in positives:
            triples.append((query, positive, negatives[int(rng.integers(len(negatives)))]))
    return triples


def train(
    model: DrrmTksModel,
    pairs: Sequence[TrainingPair],
    learning_rate: float = 0.0001,
    epochs: int = 50,
    seed: int = 42,
) -> TrainingResult:
    """
    用成对hinge损失 max(0, 1 - s(q,d+) + s(q,d-)) 和ADAM训练模型，每个三元组一步

    Args:
        model: 初始模型（不会被修改）
        pairs: 训练样本
        learning_rate: 学习率
        epochs: 训练轮数
        seed: 随机种子

    Returns:
        训练后的模型副本和每轮平均损失
    """
    if epochs < 1:
        raise ValueError(f"epochs 必须不小于1: {epochs}")
    rng = np.random.default_rng(seed)
    triples = build_triples(pairs, rng)
    if not triples:
        raise EmptyWorkError("没有任何查询同时具有正例和负例，无法构造训练三元组")

    trained = copy.deepcopy(model)
    trained.train()
    optimizer = torch.optim.Adam([p for p in trained.parameters() if p.requires_grad], lr=learning_rate)
    criterion = nn.MarginRankingLoss(margin=1.0)
    target = torch.ones(1, dtype=DTYPE)
    losses: List[float] = []
    for epoch in range(epochs):
        if epoch > 0:
            triples = build_triples(pairs, rng)
        total = 0.0
        for index in rng.permutation(len(triples)):
            query, positive, negative = triples[index]
            loss = criterion(trained(query, positive).reshape(1), trained(query, negative).reshape(1), target)
            total += loss.item()
            # 间隔已满足的三元组不更新
            if loss.item() > 0:
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
        losses.append(total / len(triples))
        logger.info("第 %d/%d 轮训练完成，平均损失 %.6f", epoch + 1, epochs, losses[-1])
    trained.eval()
    return TrainingResult(trained, losses)


def _balanced_pairs(
    positives_by_query: Mapping[Tokens, Iterable[str]],
    documents: Mapping[str, Tokens],
    rng: np.random.Generator,
    kind: str,
) -> List[TrainingPair]:
    """每个查询抽取与正例数量相同的负例（不放回），负例不足时全部使用"""
    universe = sorted(documents)
    pairs: List[TrainingPair] = []
    missing_negatives = 0
    for query in sorted(positives_by_query):
        positives = set(positives_by_query[query])
        for key in sorted(positives):
            pairs.append(TrainingPair(query, documents[key], 1))
        candidates = [key for key in universe if key not in positives]
        if not candidates:
            missing_negatives += 1
            continue
        size = min(len(positives), len(candidates))
        for index in sorted(rng.choice(len(candidates), size=size, replace=False).tolist()):
            pairs.append(TrainingPair(query, documents[candidates[index]], -1))
    if missing_negatives:
        logger.warning("%s: %d 个查询没有可用的负例", kind, missing_negatives)
    return pairs


def generate_schema_training_pairs(
    corpus: TableCorpus, analyzer: Analyzer = DEFAULT_ANALYZER, seed: int = 42
) -> List[TrainingPair]:
    """
    表格标题作为查询，同表的列名为正例，未与该标题同时出现的列名为负例

    Args:
        corpus: 关系表语料
        analyzer: 文本分析器
        seed: 负例采样种子

    Returns:
        训练样本列表
    """
    labels: Dict[str, Tokens] = {}
    positives: Dict[Tokens, set] = defaultdict(set)
    for table in corpus.tables.values():
        caption = tuple(analyzer.analyze(table.caption))
        for heading in table.headings:
            tokens = tuple(analyzer.analyze(heading))
            if not tokens:
                continue
            key = " ".join(tokens)
            labels[key] = tokens
            if caption:
                positives[caption].add(key)
    return _balanced_pairs(positives, labels, np.random.default_rng(seed), "标题-列名样本")


def generate_entity_label_pairs(
    corpus: TableCorpus,
    kb: Mapping[str, Entity],
    representation: str = "description",
    analyzer: Analyzer = DEFAULT_ANALYZER,
    seed: int = 42,
) -> List[TrainingPair]:
    """
    实体与其所在表格（作为核心列实体）的列名为正例

    Args:
        corpus: 关系表语料
        kb: 实体存储
        representation: 实体表示方式
        analyzer: 文本分析器
        seed: 负例采样种子

    Returns:
        训练样本列表
    """
    labels: Dict[str, Tokens] = {}
    positives: Dict[Tokens, set] = defaultdict(set)
    for table in corpus.tables.values():
        heading_keys = []
        for heading in table.headings:
            tokens = tuple(analyzer.analyze(heading))
            if tokens:
                labels[" ".join(tokens)] = tokens
                heading_keys.append(" ".join(tokens))
        for entity_id in table.core_entities:
            entity = kb.get(entity_id)
            if entity is None:
                continue
            query = tuple(entity_representation(entity, representation, analyzer))
            if query:
                positives[query].update(heading_keys)
    return _balanced_pairs(positives, labels, np.random.default_rng(seed), "实体-列名样本")


def generate_entity_query_pairs(
    corpus: TableCorpus,
    kb: Mapping[str, Entity],
    analyzer: Analyzer = DEFAULT_ANALYZER,
    seed: int = 42,
) -> List[TrainingPair]:
    """
    表格标题作为查询，核心列实体的 e_d⊕e_p 为正例，未出现在该标题下的实体为负例

    Args:
        corpus: 关系表语料
        kb: 实体存储
        analyzer: 文本分析器
        seed: 负例采样种子

    Returns:
        训练样本列表
    """
    documents: Dict[str, Tokens] = {}
    positives: Dict[Tokens, set] = defaultdict(set)
    for table in corpus.tables.values():
        caption = tuple(analyzer.analyze(table.caption))
        for entity_id in table.core_entities:
            entity = kb.get(entity_id)
            if entity is None:
                continue
            tokens = tuple(
                entity_representation(entity, "description", analyzer)
                + entity_representation(entity, "properties", analyzer)
            )
            if not tokens:
                continue
            documents[entity_id] = tokens
            if caption:
                positives[caption].add(entity_id)
    return _balanced_pairs(positives, documents, np.random.default_rng(seed), "标题-实体样本")


def save_model(model: DrrmTksModel, file_path: str) -> None:
    """
    保存模型为JSON文件，state_dict 中的浮点数保留完整精度

    Args:
        model: 模型
        file_path: 输出路径
    """
    record = {
        "artifact": MODEL_ARTIFACT,
        "version": MODEL_VERSION,
        "k_signals": model.k_signals,
        "hidden_layout": list(model.hidden_layout),
        "terms": model.terms,
        "dim": model.dim,
        "trainable": model.trainable,
        "state": {name: tensor.tolist() for name, tensor in model.state_dict().items()},
    }
    directory = os.path.dirname(file_path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(file_path, "w", encoding="utf-8") as f:
        json.dump(record, f, sort_keys=True)


def load_model(file_path: str) -> DrrmTksModel:
    """
    加载模型文件

    Args:
        file_path: 模型文件路径

    Returns:
        模型
    """
    if not os.path.exists(file_path):
        raise InputError(f"模型文件不存在: {file_path}")
    try:
        with open(file_path, "r", encoding="utf-8") as f:
            record = json.load(f)
    except (OSError, ValueError) as e:
        raise CorruptArtifactError(f"无法读取模型文件 {file_path}: {e}")
    if not isinstance(record, dict) or record.get("artifact") != MODEL_ARTIFACT:
        raise CorruptArtifactError(f"不是 DRRM_TKS 模型文件: {file_path}")
    if record.get("version") != MODEL_VERSION:
        raise CorruptArtifactError(f"不支持的模型版本 {record.get('version')}: {file_path}")
    try:
        terms = [str(t) for t in record["terms"]]
        dim = int(record["dim"])
        embedding = EmbeddingTable(
            terms, np.zeros((len(terms), dim)), dim=dim, trainable=bool(record["trainable"]), normalize=False
        )
        model = DrrmTksModel(embedding, int(record["k_signals"]), record["hidden_layout"])
        expected = model.state_dict()
        state = {}
        for name, values in record["state"].items():
            tensor = torch.tensor(values, dtype=DTYPE)
            # 空词表的词向量矩阵在JSON中丢失了形状
            if tensor.numel() == 0 and name in expected:
                tensor = tensor.reshape(expected[name].shape)
            state[name] = tensor
        model.load_state_dict(state)
    except (KeyError, TypeError, ValueError, RuntimeError) as e:
        raise CorruptArtifactError(f"模型文件内容损坏 {file_path}: {e}")
    model.eval()
    return model


def write_loss_curve(file_path: str, losses: Sequence[float]) -> None:
    """写出每轮平均损失，CSV列为 epoch,mean_loss"""
    with open(file_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "mean_loss"])
        for epoch, loss in enumerate(losses, start=1):
            writer.writerow([epoch, repr(loss)])
