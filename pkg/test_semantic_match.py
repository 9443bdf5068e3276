"""
DRRM_TKS 匹配模型测试：匹配矩阵、top-k 信号、梯度、训练与模型文件
"""

import asyncio
import json

import numpy as np
import pytest
import torch
from torch.func import functional_call

from table_generator.errors import CorruptArtifactError, EmptyWorkError, InputError
from table_generator.semantic_match import (
    DTYPE,
    DrrmTksModel,
    EmbeddingTable,
    TrainingPair,
    generate_entity_label_pairs,
    generate_entity_query_pairs,
    generate_schema_training_pairs,
    load_model,
    matching_matrix,
    save_model,
    score,
    topk_signals,
    train,
    write_loss_curve,
)


def _unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def test_matching_matrix_matches_dot_products():
    vectors = {"a": [1.0, 0.0, 1.0], "b": [0.0, 2.0, 0.0], "c": [1.0, 1.0, 1.0], "d": [3.0, 0.0, -1.0]}
    embedding = EmbeddingTable.from_vectors(vectors)
    matrix = matching_matrix(["a", "b"], ["c", "d", "a"], embedding)
    assert tuple(matrix.shape) == (2, 3)
    for i, x in enumerate(["a", "b"]):
        for j, y in enumerate(["c", "d", "a"]):
            assert float(matrix[i, j]) == pytest.approx(float(_unit(vectors[x]) @ _unit(vectors[y])), abs=1e-12)
    assert bool(torch.all(matrix.abs() <= 1.0 + 1e-12))


def test_matching_matrix_rejects_empty_input():
    embedding = EmbeddingTable.from_vectors({"a": [1.0, 0.0]})
    with pytest.raises(ValueError):
        matching_matrix([], ["a"], embedding)


def test_oov_vectors_are_deterministic():
    embedding = EmbeddingTable.from_vectors({"a": [1.0, 0.0, 0.0], "zero": [0.0, 0.0, 0.0]})
    assert "zero" not in embedding.index
    first = embedding.vector("unseen")
    again = EmbeddingTable.from_vectors({"a": [1.0, 0.0, 0.0]}).vector("unseen")
    assert torch.equal(first, again)
    assert float(torch.linalg.norm(first)) == pytest.approx(1.0)


def test_topk_signals_matches_oracle():
    rng = np.random.default_rng(3)
    matrix = rng.uniform(-1, 1, (3, 3))
    top = np.sort(matrix.ravel())[::-1][:4]
    expected = np.exp(top - top.max()) / np.exp(top - top.max()).sum()
    signals = topk_signals(matrix, 4).numpy()
    assert np.allclose(signals, expected, atol=1e-12)
    assert signals.sum() == pytest.approx(1.0)
    assert np.all(np.diff(signals) <= 1e-15)


def test_topk_signals_pads_small_matrices():
    signals = topk_signals(np.array([[0.5]]), 3).numpy()
    padded = np.array([0.5, -1.0, -1.0])
    assert np.allclose(signals, np.exp(padded) / np.exp(padded).sum())


def test_score_degenerate_input():
    model = DrrmTksModel.initialize(EmbeddingTable.random(["a"], dim=4), k_signals=3, hidden_layout=(4,))
    result = score(model, [], ["a"])
    assert result.value == 0.0 and result.degenerate
    assert not score(model, ["a"], ["a"]).degenerate


def test_zero_model_scores_zero():
    model = DrrmTksModel.zeros(EmbeddingTable.random(["a", "b"], dim=4), k_signals=3, hidden_layout=(4,))
    assert score(model, ["a"], ["b"]).value == 0.0


def test_score_ignores_token_order():
    """top-k 取自整个匹配矩阵，交换查询或文档中词项的顺序不改变得分"""
    embedding = EmbeddingTable.random(["a", "b", "c", "d", "e"], dim=6, seed=2)
    model = DrrmTksModel.initialize(embedding, k_signals=4, hidden_layout=(5, 3), seed=9)
    expected = score(model, ["a", "b", "c"], ["d", "e"]).value
    for query, document in [(["c", "a", "b"], ["d", "e"]), (["b", "c", "a"], ["e", "d"])]:
        assert score(model, query, document).value == pytest.approx(expected, abs=1e-12)
    assert score(model, ["a", "b", "c"], ["d", "e", "a"]).value != pytest.approx(expected, abs=1e-12)


def test_scorer_gradients_match_finite_differences():
    """打分器对匹配矩阵的梯度与数值差分一致"""
    model = DrrmTksModel.initialize(EmbeddingTable.random(["a"], dim=4), k_signals=3, hidden_layout=(5, 3), seed=11)
    matrix = torch.tensor(np.random.default_rng(4).uniform(-1, 1, (2, 3)), dtype=DTYPE, requires_grad=True)
    assert torch.autograd.gradcheck(lambda m: model.scorer(topk_signals(m, 3)), (matrix,))


def test_embedding_gradients_match_finite_differences():
    """得分对可训练词向量的梯度与数值差分一致，未登录词不参与"""
    embedding = EmbeddingTable.random(["a", "b", "c"], dim=4, seed=7)
    model = DrrmTksModel.initialize(embedding, k_signals=3, hidden_layout=(5, 3), seed=11)
    weight = model.embedding.weight.detach().clone().requires_grad_(True)

    def forward(w):
        return functional_call(model, {"embedding.weight": w}, (["a", "b"], ["c", "unseen"]))

    assert torch.autograd.gradcheck(forward, (weight,))


def _separable_pairs():
    pairs = []
    for i in range(100):
        pairs.append(TrainingPair((f"q{i}",), (f"q{i}",), 1))
        pairs.append(TrainingPair((f"q{i}",), (f"n{i}",), -1))
    return pairs


def _small_model(pairs, seed=42):
    vocabulary = sorted({t for p in pairs for t in p.query + p.document})
    embedding = EmbeddingTable.random(vocabulary, dim=8, seed=seed)
    return DrrmTksModel.initialize(embedding, k_signals=5, hidden_layout=(8, 4), seed=seed)


def _same_state(a, b):
    first, second = a.state_dict(), b.state_dict()
    return first.keys() == second.keys() and all(torch.equal(first[k], second[k]) for k in first)


def test_training_reduces_loss_and_is_reproducible():
    pairs = _separable_pairs()
    model = _small_model(pairs)
    result = train(model, pairs, learning_rate=0.01, epochs=50, seed=5)
    assert len(result.losses) == 50
    assert result.losses[-1] < 0.5 * result.losses[0]
    assert score(result.model, ["q1"], ["q1"]).value > score(result.model, ["q1"], ["n1"]).value
    # 原模型不被修改
    assert _same_state(model, _small_model(pairs))
    assert not result.model.training

    again = train(_small_model(pairs), pairs, learning_rate=0.01, epochs=50, seed=5)
    assert again.losses == result.losses
    assert _same_state(again.model, result.model)


def test_training_respects_frozen_embeddings():
    pairs = _separable_pairs()[:20]
    vocabulary = sorted({t for p in pairs for t in p.query + p.document})
    rng = np.random.default_rng(0)
    frozen = EmbeddingTable.from_vectors({t: rng.standard_normal(4).tolist() for t in vocabulary})
    model = DrrmTksModel.initialize(frozen, k_signals=3, hidden_layout=(4,), seed=1)
    trained = train(model, pairs, learning_rate=0.01, epochs=3).model
    assert torch.equal(trained.embedding.weight, model.embedding.weight)
    assert not torch.equal(trained.linear_layers()[0].weight, model.linear_layers()[0].weight)

    learnable = _small_model(pairs)
    updated = train(learnable, pairs, learning_rate=0.01, epochs=3).model
    assert not torch.equal(updated.embedding.weight, learnable.embedding.weight)


def test_train_requires_triples():
    pairs = [TrainingPair(("q",), ("d",), 1)]
    with pytest.raises(EmptyWorkError):
        train(_small_model(pairs), pairs, epochs=1)
    with pytest.raises(ValueError):
        train(_small_model(pairs), pairs, epochs=0)


def test_model_file_reload_is_exact(tmp_path):
    pairs = _separable_pairs()[:20]
    model = train(_small_model(pairs), pairs, learning_rate=0.01, epochs=2).model
    path = tmp_path / "model.json"
    save_model(model, str(path))
    reloaded = load_model(str(path))
    assert _same_state(model, reloaded)
    assert reloaded.terms == model.terms and reloaded.trainable
    assert score(model, ["q1"], ["n1"]).value == score(reloaded, ["q1"], ["n1"]).value


def test_model_with_empty_vocabulary_reloads(tmp_path):
    embedding = EmbeddingTable.from_vectors({"zero": [0.0, 0.0, 0.0]})
    assert len(embedding) == 0
    model = DrrmTksModel.initialize(embedding, k_signals=2, hidden_layout=(3,))
    path = tmp_path / "empty.json"
    save_model(model, str(path))
    reloaded = load_model(str(path))
    assert tuple(reloaded.embedding.weight.shape) == (0, 3)
    assert score(reloaded, ["x"], ["y"]).value == score(model, ["x"], ["y"]).value


def test_model_file_errors(tmp_path):
    with pytest.raises(InputError):
        load_model(str(tmp_path / "missing.json"))
    path = tmp_path / "model.json"
    path.write_text(json.dumps({"artifact": "drrm-tks", "version": 99}), encoding="utf-8")
    with pytest.raises(CorruptArtifactError):
        load_model(str(path))
    path.write_text("{broken", encoding="utf-8")
    with pytest.raises(CorruptArtifactError):
        load_model(str(path))

    model = DrrmTksModel.initialize(EmbeddingTable.random(["a"], dim=2), k_signals=2, hidden_layout=(2,))
    save_model(model, str(path))
    record = json.loads(path.read_text(encoding="utf-8"))
    record["state"]["scorer.0.weight"] = [[1.0]]
    path.write_text(json.dumps(record), encoding="utf-8")
    with pytest.raises(CorruptArtifactError):
        load_model(str(path))


def test_write_loss_curve(tmp_path):
    path = tmp_path / "loss.csv"
    write_loss_curve(str(path), [1.0, 0.5])
    assert path.read_text(encoding="utf-8").splitlines() == ["epoch,mean_loss", "1,1.0", "2,0.5"]


def test_embedding_file(tmp_path):
    path = tmp_path / "vectors.txt"
    path.write_text("a 1 0\nb 0 2\n", encoding="utf-8")
    embedding = EmbeddingTable.from_file(str(path))
    assert embedding.terms == ["a", "b"]
    assert not embedding.trainable
    path.write_text("a 1 x\n", encoding="utf-8")
    with pytest.raises(InputError):
        EmbeddingTable.from_file(str(path))


def test_training_pair_generation(bundle):
    """正负例数量平衡，标题和列名都来自语料"""
    schema_pairs = generate_schema_training_pairs(bundle.corpus, bundle.analyzer)
    positives = [p for p in schema_pairs if p.label > 0]
    negatives = [p for p in schema_pairs if p.label < 0]
    assert positives and len(negatives) == len(positives)
    towns_caption = ("towns", "ireland")
    assert {p.document for p in positives if p.query == towns_caption} == {
        ("town",),
        ("county",),
        ("population",),
    }
    assert all(p.document not in {("town",), ("county",), ("population",)}
               for p in negatives if p.query == towns_caption)

    label_pairs = generate_entity_label_pairs(bundle.corpus, bundle.kb, analyzer=bundle.analyzer)
    assert any(p.label > 0 for p in label_pairs)

    entity_pairs = generate_entity_query_pairs(bundle.corpus, bundle.kb, bundle.analyzer)
    assert {p.label for p in entity_pairs} == {1, -1}
    assert generate_entity_query_pairs(bundle.corpus, bundle.kb, bundle.analyzer) == entity_pairs


def test_embedding_client_with_fake_embeddings():
    from langchain_core.embeddings import DeterministicFakeEmbedding

    from table_generator.embedding_client import EmbeddingClient

    client = EmbeddingClient(DeterministicFakeEmbedding(size=8))
    vectors = client.embed_vocabulary(["b", "a", "a"])
    assert list(vectors) == ["a", "b"]
    assert all(len(v) == 8 for v in vectors.values())
    table = EmbeddingTable.from_client(client, ["a", "b"])
    assert table.dim == 8 and not table.trainable

    remote = asyncio.run(EmbeddingTable.async_from_client(client, ["b", "a"]))
    assert remote.terms == table.terms
    assert np.array_equal(remote.weights, table.weights)


def test_embedding_client_requires_api_key(monkeypatch):
    from table_generator.embedding_client import EmbeddingClient
    from table_generator.errors import ConfigError

    monkeypatch.delenv("ALI_API_KEY", raising=False)
    with pytest.raises(ConfigError):
        EmbeddingClient()
