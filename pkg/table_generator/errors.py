class TableGenError(Exception):
    """表格生成相关错误的基类"""

    exit_code = 1


class InputError(TableGenError):
    """输入文件不可读或参数非法"""

    exit_code = 2


class ConfigError(InputError):
    """配置值非法"""


class MissingModelError(InputError):
    """权重非零的特征缺少训练好的匹配模型"""

    def __init__(self, feature: str, task: str):
        self.feature = feature
        self.task = task
        super().__init__(f"特征 {feature} 需要 {task} 模型，但未提供")


class CorruptArtifactError(TableGenError):
    """索引包或模型文件损坏（版本或哈希不一致）"""

    exit_code = 3


class EmptyWorkError(TableGenError):
    """没有可处理的数据，例如无法生成训练样本"""

    exit_code = 4


class PipelineError(TableGenError):
    """迭代生成过程中某个组件失败"""

    def __init__(self, round_index: int, stage: str, cause: Exception):
        self.round_index = round_index
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"第 {round_index} 轮 {stage} 失败: {cause}")
