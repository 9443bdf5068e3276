import os
from typing import Dict, List, Optional, Sequence

from dotenv import load_dotenv
from langchain_core.embeddings import Embeddings
from langchain_openai import OpenAIEmbeddings
from pydantic import SecretStr

from .errors import ConfigError, TableGenError

# 加载环境变量
load_dotenv()


class EmbeddingClient:
    """词向量客户端，通过LangChain的Embeddings接口获取词项向量"""

    def __init__(self, embeddings: Optional[Embeddings] = None):
        """
        初始化词向量客户端

        Args:
            embeddings: 任意LangChain Embeddings实现，为None时按环境变量创建OpenAI兼容客户端
        """
        if embeddings is not None:
            self.embeddings = embeddings
            self.model_name = type(embeddings).__name__
            return

        self.base_url = os.getenv(
            "ALI_BASE_URL", "https://dashscope.aliyuncs.com/compatible-mode/v1"
        )
        self.model_name = os.getenv("ALI_EMBEDDING_MODEL", "text-embedding-v3")
        self.api_key = os.getenv("ALI_API_KEY")

        if not self.api_key:
            raise ConfigError("缺少必要的环境变量配置: ALI_API_KEY")

        self.embeddings = OpenAIEmbeddings(
            model=self.model_name,
            api_key=SecretStr(self.api_key),
            base_url=self.base_url,
            check_embedding_ctx_length=False,
        )

    def embed_vocabulary(self, terms: Sequence[str]) -> Dict[str, List[float]]:
        """
        获取一批词项的向量

        Args:
            terms: 词项列表

        Returns:
            词项到向量的映射
        """
        unique = sorted(set(terms))
        if not unique:
            return {}
        try:
            vectors = self.embeddings.embed_documents(unique)
        except Exception as e:
            raise TableGenError(f"调用词向量API失败: {str(e)}")
        return dict(zip(unique, vectors))

    async def async_embed_vocabulary(self, terms: Sequence[str]) -> Dict[str, List[float]]:
        """
        异步获取一批词项的向量

        Args:
            terms: 词项列表

        Returns:
            词项到向量的映射
        """
        unique = sorted(set(terms))
        if not unique:
            return {}
        try:
            vectors = await self.embeddings.aembed_documents(unique)
        except Exception as e:
            raise TableGenError(f"调用词向量API失败: {str(e)}")
        return dict(zip(unique, vectors))
