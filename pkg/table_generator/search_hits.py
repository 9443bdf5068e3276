"""属性检索中 sh(s,e) 使用的搜索命中数来源"""

import logging
import os
from typing import Dict, Optional, Tuple

from .errors import ConfigError, InputError

logger = logging.getLogger(__name__)


class HitsProvider:
    """查询 "<s> of <e>" 的搜索结果数量"""

    name = "base"

    def hits(self, label: str, entity_id: str) -> int:
        raise NotImplementedError


class NullProvider(HitsProvider):
    """离线默认实现，命中数恒为0"""

    name = "null"

    def hits(self, label: str, entity_id: str) -> int:
        return 0


class FileProvider(HitsProvider):
    """从 hits.tsv 读取命中数，每行 "label<TAB>entity<TAB>count"，#开头为注释"""

    name = "file"

    def __init__(self, file_path: str):
        """
        初始化命中数文件来源

        Args:
            file_path: hits.tsv 路径
        """
        if not os.path.exists(file_path):
            raise InputError(f"命中数文件不存在: {file_path}")
        self.file_path = file_path
        self.counts: Dict[Tuple[str, str], int] = {}
        with open(file_path, "r", encoding="utf-8") as f:
            for line_number, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line.strip() or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise InputError(f"命中数文件第 {line_number} 行格式错误: {file_path}")
                try:
                    count = int(parts[2])
                except ValueError:
                    raise InputError(f"命中数文件第 {line_number} 行计数非法: {parts[2]}")
                self.counts[(parts[0].strip().lower(), parts[1].strip())] = count
        logger.info("已加载 %d 条搜索命中数", len(self.counts))

    def hits(self, label: str, entity_id: str) -> int:
        return self.counts.get((label.strip().lower(), entity_id), 0)


def create_provider(name: str, file_path: Optional[str] = None) -> HitsProvider:
    """
    按名称创建命中数来源

    Args:
        name: null 或 file
        file_path: file 来源的文件路径

    Returns:
        命中数来源
    """
    if name == "null":
        return NullProvider()
    if name == "file":
        if not file_path:
            raise ConfigError("hits_provider=file 时必须提供 hits_file")
        return FileProvider(file_path)
    raise ConfigError(f"未知的搜索命中数来源: {name}")
