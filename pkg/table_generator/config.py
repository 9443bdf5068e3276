import os
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, List, Mapping, Optional, Tuple

from dotenv import dotenv_values, load_dotenv

from .errors import ConfigError, InputError

ENV_PREFIX = "TABGEN_"

ENTITY_FEATURES = ("phi1", "phi2", "phi3", "phi4", "phi5", "phi6", "phi7")
SCHEMA_FEATURES = ("phi1", "phi2", "phi3", "phi4", "phi5")

HITS_PROVIDERS = ("null", "file")
LOOKUP_SOURCES = ("kb", "tc", "both")


@dataclass(frozen=True)
class Config:
    """表格生成的全部参数

    默认值：
    mu=2000（Dirichlet平滑参数），delta=0.8（列名归一化阈值），
    gamma=0.8（P(s|T)的编辑相似度阈值），k_feedback=10（每轮反馈的前k个结果），
    candidate_n=100 / label_candidates=100（每个查询的候选集大小），
    learning_rate=0.0001、epochs=50（DRRM_TKS训练）。
    """

    mu: float = 2000.0
    delta: float = 0.8
    gamma: float = 0.8
    k_feedback: int = 10
    rounds: int = 3
    candidate_n: int = 100
    label_candidates: int = 100
    table_k: int = 100
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    n_out: int = 10
    m_out: int = 5
    synonym_threshold: int = 3
    hits_threshold: float = 1e6
    hits_provider: str = "null"
    hits_file: Optional[str] = None
    prior: str = "uniform"
    ar_weights: Tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    lookup_sources: str = "both"
    learning_rate: float = 0.0001
    epochs: int = 50
    k_signals: int = 50
    hidden_layout: Tuple[int, ...] = (50, 20)
    embedding_dim: int = 50
    folds: int = 5
    ridge: float = 1e-6
    helped_threshold: float = 0.05
    seed: int = 42
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    stopwords_file: Optional[str] = None
    entity_weights_file: Optional[str] = None
    schema_weights_file: Optional[str] = None

    def validate(self) -> "Config":
        """
        校验参数取值范围

        Returns:
            自身，便于链式调用
        """
        for name in ("delta", "gamma"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"参数 {name} 必须在 [0,1] 之间: {value}")
        if self.mu <= 0:
            raise ConfigError(f"参数 mu 必须大于0: {self.mu}")
        if self.k_feedback < 1:
            raise ConfigError(f"参数 k_feedback 必须不小于1: {self.k_feedback}")
        if self.rounds < 0:
            raise ConfigError(f"参数 rounds 不能为负数: {self.rounds}")
        if self.folds < 2:
            raise ConfigError(f"参数 folds 必须不小于2: {self.folds}")
        if self.hits_provider not in HITS_PROVIDERS:
            raise ConfigError(f"未知的搜索命中数来源: {self.hits_provider}")
        if self.hits_provider == "file" and not self.hits_file:
            raise ConfigError("hits_provider=file 时必须提供 hits_file")
        if self.lookup_sources not in LOOKUP_SOURCES:
            raise ConfigError(f"未知的取值来源: {self.lookup_sources}")
        if self.prior != "uniform":
            raise ConfigError(f"仅支持 prior=uniform: {self.prior}")
        if len(self.ar_weights) != 4:
            raise ConfigError("ar_weights 必须包含4个权重")
        if self.threads < 1:
            raise ConfigError(f"参数 threads 必须不小于1: {self.threads}")
        return self

    def with_overrides(self, overrides: Mapping[str, Any]) -> "Config":
        """
        用键值对覆盖参数，值可以是字符串（来自配置文件或环境变量）

        Args:
            overrides: 参数名到取值的映射，值为None的项被忽略

        Returns:
            新的配置对象
        """
        known = {f.name: f for f in fields(self)}
        changes: Dict[str, Any] = {}
        for key, value in overrides.items():
            if value is None:
                continue
            name = key.lower().replace("-", "_")
            if name not in known:
                raise ConfigError(f"未知的配置项: {key}")
            changes[name] = _coerce(getattr(self, name), value, name)
        return replace(self, **changes)


def _coerce(current: Any, value: Any, name: str) -> Any:
    """将字符串配置值转换为与默认值相同的类型"""
    if not isinstance(value, str):
        return tuple(value) if isinstance(current, tuple) else value
    text = value.strip()
    try:
        if isinstance(current, int):
            return int(text)
        if isinstance(current, float):
            return float(text)
        if isinstance(current, tuple):
            parts = [p for p in text.replace(",", " ").split() if p]
            caster = type(current[0]) if current else float
            return tuple(caster(p) for p in parts)
    except ValueError:
        raise ConfigError(f"配置项 {name} 的取值非法: {value}")
    return text


def _environment_overrides() -> Dict[str, str]:
    """读取 TABGEN_ 前缀的环境变量"""
    overrides = {}
    for key, value in os.environ.items():
        if key.startswith(ENV_PREFIX):
            overrides[key[len(ENV_PREFIX):]] = value
    return overrides


def load_config(
    config_file: Optional[str] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    use_environment: bool = True,
) -> Config:
    """
    按层次加载配置：默认值 → 环境变量(.env) → 配置文件 → 命令行参数

    Args:
        config_file: key=value 格式的配置文件路径
        overrides: 命令行参数覆盖项
        use_environment: 是否读取 .env 和 TABGEN_ 环境变量

    Returns:
        校验后的配置对象
    """
    config = Config()
    if use_environment:
        load_dotenv()
        config = config.with_overrides(_environment_overrides())
    if config_file:
        if not os.path.exists(config_file):
            raise InputError(f"配置文件不存在: {config_file}")
        values = {k: v for k, v in dotenv_values(config_file).items() if v is not None}
        config = config.with_overrides(values)
    if overrides:
        config = config.with_overrides(overrides)
    return config.validate()


def read_weights(file_path: Optional[str], names: Tuple[str, ...]) -> List[float]:
    """
    读取特征权重文件，格式为 "phi1 <w> phi2 <w> ..."

    Args:
        file_path: 权重文件路径，为None时返回均匀权重
        names: 特征名称序列

    Returns:
        与names顺序一致的权重列表
    """
    if not file_path:
        return [1.0] * len(names)
    if not os.path.exists(file_path):
        raise InputError(f"权重文件不存在: {file_path}")
    with open(file_path, "r", encoding="utf-8") as f:
        tokens = f.read().split()
    if len(tokens) % 2 != 0:
        raise InputError(f"权重文件格式错误: {file_path}")
    weights: Dict[str, float] = {}
    for name, value in zip(tokens[0::2], tokens[1::2]):
        if name not in names:
            raise InputError(f"权重文件中存在未知特征 {name}: {file_path}")
        try:
            weights[name] = float(value)
        except ValueError:
            raise InputError(f"特征 {name} 的权重非法: {value}")
    missing = [n for n in names if n not in weights]
    if missing:
        raise InputError(f"权重文件缺少特征 {', '.join(missing)}: {file_path}")
    return [weights[n] for n in names]


def write_weights(file_path: str, names: Tuple[str, ...], weights: List[float]) -> None:
    """
    写出特征权重文件

    Args:
        file_path: 输出路径
        names: 特征名称序列
        weights: 权重列表
    """
    with open(file_path, "w", encoding="utf-8") as f:
        f.write(" ".join(f"{n} {w!r}" for n, w in zip(names, weights)) + "\n")
