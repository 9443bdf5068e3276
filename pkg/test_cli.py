"""
命令行测试：build → generate → eval 全流程、train、learn、rounds 以及退出码
"""

import asyncio
import json
import os

import pytest

from conftest import ALBUMS, ENTITY_QRELS, ENTITY_WEIGHTS, LABEL_QRELS, QUERY, SCHEMA_WEIGHTS, TOWNS
from main import main
from table_generator.config import ENTITY_FEATURES, SCHEMA_FEATURES, read_weights, write_weights


def run_cli(*argv):
    return asyncio.run(main(list(argv)))


@pytest.fixture
def bundle_dir(tmp_path, data_files):
    out = str(tmp_path / "bundle")
    assert run_cli("build", "--tables", data_files[0], "--kb", data_files[1], "--out", out) == 0
    return out


@pytest.fixture
def weight_args(tmp_path):
    entity = str(tmp_path / "entity.weights")
    schema = str(tmp_path / "schema.weights")
    write_weights(entity, ENTITY_FEATURES, ENTITY_WEIGHTS)
    write_weights(schema, SCHEMA_FEATURES, SCHEMA_WEIGHTS)
    return ["--entity-weights", entity, "--schema-weights", schema]


def test_build_writes_bundle(capsys, bundle_dir):
    assert sorted(os.listdir(bundle_dir)) == [
        "catalog.jsonl",
        "corpus.jsonl",
        "indexes.jsonl",
        "manifest.json",
        "synonyms.jsonl",
    ]
    captured = capsys.readouterr()
    assert captured.out == ""
    assert "构建完成" in captured.err


def test_build_is_deterministic(tmp_path, data_files):
    for name in ("a", "b"):
        assert run_cli("build", "--tables", data_files[0], "--kb", data_files[1], "--out", str(tmp_path / name)) == 0
    for file_name in os.listdir(tmp_path / "a"):
        assert (tmp_path / "a" / file_name).read_bytes() == (tmp_path / "b" / file_name).read_bytes()


def test_build_missing_kb_exits_2(tmp_path, data_files, capsys):
    missing = str(tmp_path / "missing.jsonl")
    code = run_cli("build", "--tables", data_files[0], "--kb", missing, "--out", str(tmp_path / "out"))
    assert code == 2
    assert missing in capsys.readouterr().err


def test_generate_json(bundle_dir, weight_args, capsys):
    capsys.readouterr()
    assert run_cli("generate", bundle_dir, "-q", QUERY, "--rounds", "1", *weight_args) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 1
    record = json.loads(lines[0])
    assert record["qid"] == "q1"
    assert record["query"] == QUERY
    assert len(record["entities"]) == 7
    assert len(record["schema"]) == 5


def test_generate_tsv_and_run_files(tmp_path, bundle_dir, weight_args, capsys):
    queries = tmp_path / "queries.tsv"
    queries.write_text(f"q1\t{QUERY}\nq2\talbum band\n", encoding="utf-8")
    run_dir = tmp_path / "runs"
    capsys.readouterr()
    code = run_cli(
        "generate", bundle_dir, "--queries", str(queries), "--format", "tsv",
        "--rounds", "2", "--run-dir", str(run_dir), *weight_args,
    )
    assert code == 0
    out = capsys.readouterr().out
    assert out.startswith(f"# q1\t{QUERY}\n")
    assert "# q2\talbum band" in out
    assert sorted(os.listdir(run_dir)) == sorted(
        f"{subtask}.round{t}.run" for subtask in ("entities", "labels") for t in range(3)
    )


def test_generate_without_model_fails_with_input_error(bundle_dir, capsys):
    """默认均匀权重需要匹配模型"""
    assert run_cli("generate", bundle_dir, "-q", QUERY) == 2
    captured = capsys.readouterr()
    assert "q1" in captured.err


def test_generate_errors(tmp_path, bundle_dir, weight_args):
    empty = tmp_path / "queries.tsv"
    empty.write_text("# 没有查询\n", encoding="utf-8")
    assert run_cli("generate", bundle_dir, "--queries", str(empty), *weight_args) == 4
    assert run_cli("generate", str(tmp_path / "nope"), "-q", QUERY, *weight_args) == 2

    catalog = os.path.join(bundle_dir, "catalog.jsonl")
    with open(catalog, "a", encoding="utf-8") as f:
        f.write("{}\n")
    assert run_cli("generate", bundle_dir, "-q", QUERY, *weight_args) == 3


def test_eval_round_runs(tmp_path, bundle_dir, weight_args, capsys):
    run_dir = tmp_path / "runs"
    assert run_cli("generate", bundle_dir, "-q", QUERY, "--rounds", "1", "--run-dir", str(run_dir), *weight_args) == 0
    qrels = tmp_path / "entities.qrels"
    qrels.write_text(
        "".join(f"q1 0 {e} 1\n" for e in ["town:athlone", "town:cork", "town:galway", "town:sligo"])
        + "".join(f"q1 0 {e} 0\n" for e in ["album:a1", "album:a2", "album:a3"]),
        encoding="utf-8",
    )
    capsys.readouterr()
    round_one = str(run_dir / "entities.round1.run")
    round_zero = str(run_dir / "entities.round0.run")
    assert run_cli("eval", round_one, str(qrels), "--metrics", "ndcg@10,mrr", "--baseline", round_zero) == 0
    lines = capsys.readouterr().out.splitlines()
    values = {line.split("\t")[0]: line.split("\t")[2] for line in lines}
    assert values["mrr"] == "1.0000"
    assert values["helped"] == "1"
    assert values["hurt"] == "0"

    assert run_cli("eval", round_one, str(qrels), "--format", "json", "--per-query") == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report) == {"ndcg@5", "ndcg@10", "map", "mrr"}
    assert report["mrr"]["per_query"] == {"q1": 1.0}


def test_eval_errors(tmp_path):
    run = tmp_path / "a.run"
    run.write_text("q1 Q0 x 1 1.0 t\n", encoding="utf-8")
    qrels = tmp_path / "a.qrels"
    qrels.write_text("q1 0 x 1\n", encoding="utf-8")
    assert run_cli("eval", str(run), str(qrels), "--metrics", "p@5") == 2
    assert run_cli("eval", str(run), str(tmp_path / "missing.qrels")) == 2
    other = tmp_path / "b.run"
    other.write_text("q2 Q0 x 1 1.0 t\n", encoding="utf-8")
    assert run_cli("eval", str(run), str(qrels), "--baseline", str(other)) == 2


def test_eval_baseline_threshold_from_config(tmp_path, capsys):
    """ΔNDCG@10 约为0.37：默认阈值0.05算提升，配置阈值0.5时算不变"""
    qrels = tmp_path / "a.qrels"
    qrels.write_text("q1 0 x 1\nq1 0 y 0\n", encoding="utf-8")
    baseline = tmp_path / "baseline.run"
    baseline.write_text("q1 Q0 y 1 2.0 b\nq1 Q0 x 2 1.0 b\n", encoding="utf-8")
    run = tmp_path / "new.run"
    run.write_text("q1 Q0 x 1 2.0 r\nq1 Q0 y 2 1.0 r\n", encoding="utf-8")
    config = tmp_path / "tabgen.env"
    config.write_text("HELPED_THRESHOLD=0.5\n", encoding="utf-8")

    def counts(*extra):
        capsys.readouterr()
        assert run_cli("eval", str(run), str(qrels), "--metrics", "ndcg@10", "--baseline", str(baseline), *extra) == 0
        lines = capsys.readouterr().out.splitlines()
        return {line.split("\t")[0]: line.split("\t")[2] for line in lines}

    default = counts()
    assert (default["helped"], default["unchanged"]) == ("1", "0")
    configured = counts("--config", str(config))
    assert (configured["helped"], configured["unchanged"]) == ("0", "1")


def test_train_writes_model_and_loss_curve(tmp_path, bundle_dir):
    out = tmp_path / "schema.model.json"
    code = run_cli("train", bundle_dir, "--task", "schema-matcher", "--out", str(out), "--epochs", "1")
    assert code == 0
    assert out.exists()
    lines = (tmp_path / "schema.model.loss.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "epoch,mean_loss"
    assert len(lines) == 2


def test_train_with_remote_embeddings(tmp_path, bundle_dir, monkeypatch):
    from langchain_core.embeddings import DeterministicFakeEmbedding

    import main as cli
    from table_generator.embedding_client import EmbeddingClient
    from table_generator.semantic_match import load_model

    monkeypatch.setattr(cli, "EmbeddingClient", lambda: EmbeddingClient(DeterministicFakeEmbedding(size=6)))
    out = tmp_path / "remote.json"
    code = run_cli("train", bundle_dir, "--task", "entity-matcher", "--out", str(out),
                   "--epochs", "1", "--embeddings", "remote")
    assert code == 0
    model = load_model(str(out))
    assert model.dim == 6 and not model.trainable


def test_trained_model_enables_model_features(tmp_path, bundle_dir, capsys):
    model = tmp_path / "entity.json"
    assert run_cli("train", bundle_dir, "--task", "entity-matcher", "--out", str(model), "--epochs", "1") == 0
    capsys.readouterr()
    code = run_cli("generate", bundle_dir, "-q", QUERY, "--rounds", "1", "--entity-model", str(model),
                   "--schema-weights", _schema_weights_without_model(tmp_path))
    assert code == 0
    assert json.loads(capsys.readouterr().out)["query"] == QUERY


def _schema_weights_without_model(tmp_path):
    path = str(tmp_path / "schema.weights")
    write_weights(path, SCHEMA_FEATURES, [1.0, 1.0, 0.0, 1.0, 1.0])
    return path


def test_usage_errors():
    assert run_cli("train", "bundle", "--task", "unknown-task", "--out", "x.json") == 2
    assert run_cli("generate") == 2
    assert run_cli("--help") == 0


def _write_qrels(path, qrels):
    path.write_text(
        "".join(f"{qid} 0 {item.replace(' ', '_')} {grade}\n" for qid, items in qrels.items() for item, grade in items.items()),
        encoding="utf-8",
    )
    return str(path)


@pytest.fixture
def learning_files(tmp_path):
    queries = tmp_path / "queries.tsv"
    queries.write_text(f"q1\t{QUERY}\nq2\talbum band\n", encoding="utf-8")
    entity_qrels = _write_qrels(
        tmp_path / "entities.qrels",
        {
            "q1": ENTITY_QRELS["q1"],
            "q2": {**{e: 1 for e in ALBUMS}, **{e: 0 for e in TOWNS}},
        },
    )
    label_qrels = _write_qrels(
        tmp_path / "labels.qrels",
        {"q1": LABEL_QRELS["q1"], "q2": {"Album": 2, "Artist": 1, "Town": 0}},
    )
    return str(queries), entity_qrels, label_qrels


@pytest.mark.parametrize(
    "task, names, qrels_index",
    [("entities", ENTITY_FEATURES, 1), ("labels", SCHEMA_FEATURES, 2)],
)
def test_learn_writes_readable_weights(tmp_path, bundle_dir, weight_args, learning_files, capsys, task, names, qrels_index):
    out = str(tmp_path / f"{task}.weights")
    capsys.readouterr()
    code = run_cli(
        "learn", bundle_dir, "--queries", learning_files[0], "--qrels", learning_files[qrels_index],
        "--task", task, "--folds", "2", "--out", out, *weight_args,
    )
    assert code == 0
    weights = read_weights(out, names)
    assert len(weights) == len(names)

    captured = capsys.readouterr()
    lines = captured.out.splitlines()
    assert sorted(line.split("\t")[0] for line in lines) == sorted(names)
    printed = [float(line.split("\t")[1]) for line in lines]
    assert printed == sorted(printed, reverse=True)
    assert "2 个查询" in captured.err


def test_learn_with_too_few_queries_for_folds_exits_2(tmp_path, bundle_dir, weight_args, learning_files, capsys):
    out = tmp_path / "entities.weights"
    capsys.readouterr()
    code = run_cli("learn", bundle_dir, "--queries", learning_files[0], "--qrels", learning_files[1],
                   "--out", str(out), *weight_args)
    assert code == 2
    assert "少于折数" in capsys.readouterr().err
    assert not out.exists()


def test_learn_without_judged_queries_exits_4(tmp_path, bundle_dir, weight_args, learning_files):
    qrels = tmp_path / "other.qrels"
    qrels.write_text("q9 0 town:cork 1\n", encoding="utf-8")
    code = run_cli("learn", bundle_dir, "--queries", learning_files[0], "--qrels", str(qrels),
                   "--folds", "2", "--out", str(tmp_path / "w"), *weight_args)
    assert code == 4


def test_rounds_reports_every_stage(bundle_dir, weight_args, learning_files, capsys):
    capsys.readouterr()
    code = run_cli(
        "rounds", bundle_dir, "--queries", learning_files[0], "--entity-qrels", learning_files[1],
        "--label-qrels", learning_files[2], "--rounds", "1", "--k-feedback", "5,10", *weight_args,
    )
    assert code == 0
    rows = [line.split("\t") for line in capsys.readouterr().out.splitlines()]
    assert len(rows) == 2 * 3 * 2 * 2
    assert {row[0] for row in rows} == {"k=5", "k=10"}
    assert {row[1] for row in rows} == {"round0", "round1", "oracle"}
    assert {row[2] for row in rows} == {"entities", "labels"}
    assert {row[3] for row in rows} == {"ndcg@5", "ndcg@10"}
    assert all(0.0 <= float(row[4]) <= 1.0 for row in rows)


def test_rounds_rejects_bad_cutoffs(bundle_dir, weight_args, learning_files):
    args = ["--queries", learning_files[0], "--entity-qrels", learning_files[1], "--label-qrels", learning_files[2]]
    assert run_cli("rounds", bundle_dir, *args, "--k-feedback", "5,x", *weight_args) == 2
    assert run_cli("rounds", bundle_dir, *args, "--k-feedback", "0", *weight_args) == 2
