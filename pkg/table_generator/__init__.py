"""table-generator package"""

from .analyzer import Analyzer
from .bundle_manager import Bundle, BundleManager, build_bundle
from .config import Config, load_config
from .corpus import Entity, RelationalTable, TableCorpus
from .embedding_client import EmbeddingClient
from .errors import (
    ConfigError,
    CorruptArtifactError,
    EmptyWorkError,
    InputError,
    MissingModelError,
    PipelineError,
    TableGenError,
)
from .pipeline import GeneratedTable, TableGenerator
from .semantic_match import DrrmTksModel, EmbeddingTable

__all__ = [
    "Analyzer",
    "Bundle",
    "BundleManager",
    "build_bundle",
    "Config",
    "load_config",
    "Entity",
    "RelationalTable",
    "TableCorpus",
    "EmbeddingClient",
    "ConfigError",
    "CorruptArtifactError",
    "EmptyWorkError",
    "InputError",
    "MissingModelError",
    "PipelineError",
    "TableGenError",
    "GeneratedTable",
    "TableGenerator",
    "DrrmTksModel",
    "EmbeddingTable",
]
