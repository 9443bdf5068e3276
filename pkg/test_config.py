"""
配置加载与权重文件测试
"""

import pytest

from table_generator.config import (
    ENTITY_FEATURES,
    SCHEMA_FEATURES,
    Config,
    load_config,
    read_weights,
    write_weights,
)
from table_generator.errors import ConfigError, InputError


def test_defaults():
    config = Config()
    assert config.mu == 2000.0
    assert config.delta == 0.8
    assert config.gamma == 0.8
    assert config.k_feedback == 10
    assert config.candidate_n == 100
    assert config.label_candidates == 100
    assert config.learning_rate == 0.0001
    assert config.epochs == 50
    assert config.threads >= 1
    assert config.validate() is config


@pytest.mark.parametrize(
    "changes",
    [
        {"delta": 1.5},
        {"gamma": -0.1},
        {"mu": 0.0},
        {"k_feedback": 0},
        {"rounds": -1},
        {"folds": 1},
        {"hits_provider": "web"},
        {"hits_provider": "file"},
        {"lookup_sources": "web"},
        {"prior": "popularity"},
        {"ar_weights": (1.0, 1.0)},
        {"threads": 0},
    ],
)
def test_validate_rejects(changes):
    with pytest.raises(ConfigError):
        Config(**changes).validate()


def test_with_overrides_coerces_strings():
    config = Config().with_overrides(
        {"MU": "1500", "k-feedback": "5", "ar_weights": "1, 0.5 0 1", "hits_file": "hits.tsv", "seed": None}
    )
    assert config.mu == 1500.0
    assert config.k_feedback == 5
    assert config.ar_weights == (1.0, 0.5, 0.0, 1.0)
    assert config.hits_file == "hits.tsv"
    assert config.seed == 42
    assert Config().with_overrides({"hidden_layout": [8, 4]}).hidden_layout == (8, 4)


def test_with_overrides_errors():
    with pytest.raises(ConfigError):
        Config().with_overrides({"unknown": "1"})
    with pytest.raises(ConfigError):
        Config().with_overrides({"rounds": "three"})


def test_load_config_precedence(tmp_path, monkeypatch):
    """默认值 < 环境变量 < 配置文件 < 命令行参数"""
    monkeypatch.setenv("TABGEN_ROUNDS", "5")
    monkeypatch.setenv("TABGEN_MU", "100")
    monkeypatch.setenv("TABGEN_DELTA", "0.7")
    path = tmp_path / "tabgen.env"
    path.write_text("# 配置\nMU=300\nDELTA=0.6\n", encoding="utf-8")
    config = load_config(str(path), {"delta": 0.5, "rounds": None})
    assert config.rounds == 5
    assert config.mu == 300.0
    assert config.delta == 0.5

    assert load_config(use_environment=False).rounds == 3


def test_load_config_errors(tmp_path, monkeypatch):
    with pytest.raises(InputError):
        load_config(str(tmp_path / "missing.env"), use_environment=False)
    monkeypatch.setenv("TABGEN_DELTA", "2")
    with pytest.raises(ConfigError):
        load_config()
    monkeypatch.setenv("TABGEN_DELTA", "0.8")
    monkeypatch.setenv("TABGEN_NOT_A_KEY", "1")
    with pytest.raises(ConfigError):
        load_config()


def test_weights_file(tmp_path):
    path = tmp_path / "weights.txt"
    write_weights(str(path), SCHEMA_FEATURES, [0.5, 1.0, 0.0, 0.25, 2.0])
    assert read_weights(str(path), SCHEMA_FEATURES) == [0.5, 1.0, 0.0, 0.25, 2.0]
    # 顺序无关
    path.write_text("phi2 2 phi1 1 phi3 3 phi4 4 phi5 5 phi6 6 phi7 7\n", encoding="utf-8")
    assert read_weights(str(path), ENTITY_FEATURES) == [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]
    assert read_weights(None, ENTITY_FEATURES) == [1.0] * 7


@pytest.mark.parametrize(
    "content",
    ["phi1 1 phi2\n", "phi1 1 phi9 2\n", "phi1 one\n", "phi1 1 phi2 1 phi3 1 phi4 1\n"],
)
def test_weights_file_errors(tmp_path, content):
    path = tmp_path / "weights.txt"
    path.write_text(content, encoding="utf-8")
    with pytest.raises(InputError):
        read_weights(str(path), SCHEMA_FEATURES)
    with pytest.raises(InputError):
        read_weights(str(tmp_path / "missing.txt"), SCHEMA_FEATURES)
