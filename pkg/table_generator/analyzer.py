import os
import re
from typing import FrozenSet, Iterable, List, Optional

# 默认英文停用词表
DEFAULT_STOPWORDS: FrozenSet[str] = frozenset(
    """
    a about above after again against all am an and any are as at be because
    been before being below between both but by can did do does doing down
    during each few for from further had has have having he her here hers
    herself him himself his how i if in into is it its itself just me more
    most my myself no nor not now of off on once only or other our ours
    ourselves out over own same she should so some such than that the their
    theirs them themselves then there these they this those through to too
    under until up very was we were what when where which while who whom why
    will with you your yours yourself yourselves
    """.split()
)

_SPLIT_PATTERN = re.compile(r"[\W_]+", re.UNICODE)


class Analyzer:
    """文本分析器：小写化、按非字母数字切分、去除停用词

    整个系统只使用这一个分析器，查询、实体表示、表格文本和列名保持一致。
    """

    def __init__(self, stopwords: Optional[Iterable[str]] = None):
        """
        初始化分析器

        Args:
            stopwords: 停用词集合，为None时使用默认英文停用词表
        """
        if stopwords is None:
            self.stopwords = DEFAULT_STOPWORDS
        else:
            self.stopwords = frozenset(w.lower() for w in stopwords)

    @classmethod
    def from_file(cls, file_path: str) -> "Analyzer":
        """
        从停用词文件创建分析器，每行一个词，#开头的行为注释

        Args:
            file_path: 停用词文件路径

        Returns:
            分析器实例
        """
        words = []
        if os.path.exists(file_path):
            with open(file_path, "r", encoding="utf-8") as f:
                for line in f:
                    line = line.strip()
                    if line and not line.startswith("#"):
                        words.append(line)
        return cls(words)

    def analyze(self, text: str) -> List[str]:
        """
        将文本切分为词项序列

        Args:
            text: 原始文本

        Returns:
            词项列表（保持原顺序）
        """
        if not text:
            return []
        return [
            token
            for token in _SPLIT_PATTERN.split(text.lower())
            if token and token not in self.stopwords
        ]


DEFAULT_ANALYZER = Analyzer()
