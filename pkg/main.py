import argparse
import asyncio
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from table_generator import Analyzer, BundleManager, TableGenError, TableGenerator, build_bundle, load_config
from table_generator.config import ENTITY_FEATURES, SCHEMA_FEATURES, Config, read_weights, write_weights
from table_generator.embedding_client import EmbeddingClient
from table_generator.errors import EmptyWorkError, InputError
from table_generator.evaluation import (
    DEFAULT_METRICS,
    evaluate_rounds,
    evaluate_run,
    feature_importance,
    feature_rows,
    helped_hurt_unchanged,
    learn_weights,
    parse_qrels,
    parse_queries,
    parse_run,
    read_file_lines,
    write_round_runs,
)
from table_generator.semantic_match import (
    DrrmTksModel,
    EmbeddingTable,
    generate_entity_label_pairs,
    generate_entity_query_pairs,
    generate_schema_training_pairs,
    load_model,
    save_model,
    train,
    write_loss_curve,
)

# 设置环境变量以确保UTF-8编码
os.environ["PYTHONIOENCODING"] = "utf-8"

# 加载.env文件中的环境变量
load_dotenv()

logger = logging.getLogger("tabgen")


def status(message: str) -> None:
    """进度信息输出到标准错误，标准输出只留给结果"""
    print(message, file=sys.stderr)


def _overrides(**values: Any) -> Dict[str, Any]:
    return {k: v for k, v in values.items() if v is not None}


def cmd_build(args: argparse.Namespace) -> int:
    """解析语料和知识库，构建索引包"""
    config = load_config(
        args.config,
        _overrides(synonym_threshold=args.synonym_threshold, stopwords_file=args.stopwords),
    )
    analyzer = Analyzer.from_file(config.stopwords_file) if config.stopwords_file else Analyzer()
    status(f"正在构建索引包: {args.tables} + {args.kb} -> {args.out}")
    bundle, report = build_bundle(
        args.tables, args.kb, args.synonym_overrides, config.synonym_threshold, analyzer
    )
    if report.tables.skipped or report.kb.skipped:
        status(f"跳过格式错误的记录: 表格 {report.tables.skipped} 条, 知识库 {report.kb.skipped} 条")
    manifest = BundleManager(args.out).save(bundle)
    status(
        f"构建完成: {len(bundle.corpus)} 个关系表（{bundle.corpus.non_relational} 个非关系表被丢弃）, "
        f"{len(bundle.kb)} 个实体, {len(bundle.catalog)} 条事实, {len(bundle.synonyms.groups)} 个同义词组"
    )
    for entry in manifest["artifacts"]:
        status(f"  - {entry['file']} {entry['md5']}")
    return 0


def _load_generator(args: argparse.Namespace, config: Config) -> TableGenerator:
    """加载索引包、匹配模型和特征权重"""
    bundle = BundleManager(args.bundle).load()
    return TableGenerator(
        bundle,
        config,
        entity_model=load_model(args.entity_model) if args.entity_model else None,
        schema_model=load_model(args.schema_model) if args.schema_model else None,
        entity_weights=read_weights(config.entity_weights_file, ENTITY_FEATURES),
        schema_weights=read_weights(config.schema_weights_file, SCHEMA_FEATURES),
    )


async def cmd_generate(args: argparse.Namespace) -> int:
    """为一个或一批查询生成表格"""
    config = load_config(
        args.config,
        _overrides(
            rounds=args.rounds,
            k_feedback=args.k_feedback,
            hits_provider=args.hits_provider,
            hits_file=args.hits_file,
            threads=args.threads,
            seed=args.seed,
            lookup_sources=args.lookup_sources,
            entity_weights_file=args.entity_weights,
            schema_weights_file=args.schema_weights,
        ),
    )
    if args.query:
        queries = [("q1", args.query)]
    else:
        queries = parse_queries(read_file_lines(args.queries, "查询"))
    if not queries:
        raise EmptyWorkError("没有需要处理的查询")

    generator = _load_generator(args, config)
    status(f"正在生成 {len(queries)} 个查询的表格（并发数 {config.threads}，{config.rounds} 轮）...")
    results = await generator.generate_batch(queries, config.threads)

    exit_code = 0
    tables = []
    for (qid, query), result in zip(queries, results):
        if isinstance(result, Exception):
            status(f"查询 {qid} 生成失败: {result}")
            exit_code = max(exit_code, getattr(result, "exit_code", 1))
            continue
        tables.append(result)
        if args.format == "tsv":
            print(f"# {qid}\t{query}")
            print(result.to_tsv())
            print()
        else:
            print(result.to_json())
    if args.run_dir and tables:
        written = write_round_runs(args.run_dir, tables)
        status(f"已写出 {len(written)} 个 run 文件到 {args.run_dir}")
    return exit_code


async def _build_embedding(source: str, vocabulary: List[str], dim: int, seed: int) -> EmbeddingTable:
    """--embeddings 取值: random / file:<路径> / remote"""
    if source == "random":
        return EmbeddingTable.random(vocabulary, dim, seed)
    if source.startswith("file:"):
        return EmbeddingTable.from_file(source[len("file:"):])
    if source == "remote":
        return await EmbeddingTable.async_from_client(EmbeddingClient(), vocabulary)
    raise InputError(f"未知的词向量来源: {source}")


async def cmd_train(args: argparse.Namespace) -> int:
    """训练 DRRM_TKS 匹配模型"""
    config = load_config(
        args.config,
        _overrides(learning_rate=args.lr, epochs=args.epochs, seed=args.seed),
    )
    bundle = BundleManager(args.bundle).load()
    if args.task == "schema-matcher":
        pairs = generate_schema_training_pairs(bundle.corpus, bundle.analyzer, config.seed)
        pairs += generate_entity_label_pairs(
            bundle.corpus, bundle.kb, analyzer=bundle.analyzer, seed=config.seed
        )
    else:
        pairs = generate_entity_query_pairs(bundle.corpus, bundle.kb, bundle.analyzer, config.seed)
    if not pairs:
        raise EmptyWorkError("语料中无法生成任何训练样本")
    status(f"任务 {args.task}: {len(pairs)} 个训练样本")

    vocabulary = sorted({t for p in pairs for t in p.query + p.document})
    embedding = await _build_embedding(args.embeddings, vocabulary, config.embedding_dim, config.seed)
    model = DrrmTksModel.initialize(embedding, config.k_signals, config.hidden_layout, config.seed)
    status(f"开始训练: 学习率 {config.learning_rate}, {config.epochs} 轮")
    result = await asyncio.to_thread(train, model, pairs, config.learning_rate, config.epochs, config.seed)

    save_model(result.model, args.out)
    loss_csv = args.loss_csv or f"{os.path.splitext(args.out)[0]}.loss.csv"
    write_loss_curve(loss_csv, result.losses)
    status(f"训练完成，模型已保存到 {args.out}，损失曲线已保存到 {loss_csv}")
    return 0


def _generator_config(args: argparse.Namespace, **extra: Any) -> Config:
    return load_config(
        args.config,
        _overrides(
            entity_weights_file=args.entity_weights,
            schema_weights_file=args.schema_weights,
            seed=args.seed,
            **extra,
        ),
    )


def cmd_learn(args: argparse.Namespace) -> int:
    """在固定的一轮上计算候选特征，交叉验证学习特征权重"""
    config = _generator_config(args, k_feedback=args.k_feedback, folds=args.folds)
    queries = parse_queries(read_file_lines(args.queries, "查询"))
    if not queries:
        raise EmptyWorkError("没有需要处理的查询")
    qrels = parse_qrels(read_file_lines(args.qrels, "qrels"))
    generator = _load_generator(args, config)

    status(f"正在计算 {len(queries)} 个查询第 {args.round} 轮的{args.task}特征...")
    features = {}
    for qid, query in queries:
        entity_features, label_features = generator.round_features(query, args.round)
        if args.task == "entities":
            features[qid] = (entity_features.entity_ids, entity_features.normalized)
        else:
            features[qid] = (label_features.labels, label_features.normalized)
    rows, labels, groups = feature_rows(features, qrels)

    names = ENTITY_FEATURES if args.task == "entities" else SCHEMA_FEATURES
    try:
        fit = learn_weights(rows, labels, groups, config.folds, config.ridge, config.seed)
    except ValueError as e:
        raise InputError(str(e))
    write_weights(args.out, names, fit.weights.tolist())
    status(f"已用 {len(set(groups))} 个查询、{len(labels)} 个样本学习权重，写出到 {args.out}")
    for name, weight in feature_importance(fit.weights, names):
        print(f"{name}\t{weight:.6f}")
    return 0


def cmd_rounds(args: argparse.Namespace) -> int:
    """比较不同反馈截断k下每一轮和Oracle的NDCG"""
    config = _generator_config(args, rounds=args.rounds)
    try:
        k_values = [int(k) for k in args.k_feedback.split(",") if k.strip()]
    except ValueError:
        raise InputError(f"--k-feedback 应为逗号分隔的整数: {args.k_feedback}")
    if not k_values or min(k_values) < 1:
        raise InputError(f"--k-feedback 应为正整数: {args.k_feedback}")
    queries = parse_queries(read_file_lines(args.queries, "查询"))
    if not queries:
        raise EmptyWorkError("没有需要处理的查询")
    entity_qrels = parse_qrels(read_file_lines(args.entity_qrels, "qrels"))
    label_qrels = parse_qrels(read_file_lines(args.label_qrels, "qrels"))
    generator = _load_generator(args, config)

    status(f"正在评测 {len(queries)} 个查询, k_feedback={k_values}, {config.rounds} 轮...")
    results = evaluate_rounds(generator, queries, entity_qrels, label_qrels, config.rounds, k_values)
    for k, stages in results.items():
        for stage, subtasks in stages.items():
            for subtask, metrics in subtasks.items():
                for metric, value in metrics.items():
                    print(f"k={k}\t{stage}\t{subtask}\t{metric}\t{value:.4f}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    """评测run文件"""
    run = parse_run(read_file_lines(args.run, "run"))
    qrels = parse_qrels(read_file_lines(args.qrels, "qrels"))
    metrics = [m for m in args.metrics.split(",") if m.strip()]
    results = evaluate_run(run, qrels, metrics)

    if args.format == "json":
        report: Dict[str, Any] = {
            name: {"mean": r.mean, **({"per_query": r.per_query} if args.per_query else {})}
            for name, r in results.items()
        }
    else:
        for name, result in results.items():
            if args.per_query:
                for qid, value in sorted(result.per_query.items()):
                    print(f"{name}\t{qid}\t{value:.4f}")
            print(f"{name}\tall\t{result.mean:.4f}")

    if args.baseline:
        baseline = parse_run(read_file_lines(args.baseline, "run"))
        try:
            comparison = helped_hurt_unchanged(baseline, run, qrels, load_config(args.config).helped_threshold)
        except ValueError as e:
            raise InputError(str(e))
        if args.format == "json":
            report["helped_hurt_unchanged"] = [comparison.helped, comparison.hurt, comparison.unchanged]
        else:
            print(f"helped\tall\t{comparison.helped}")
            print(f"hurt\tall\t{comparison.hurt}")
            print(f"unchanged\tall\t{comparison.unchanged}")

    if args.format == "json":
        print(json.dumps(report, ensure_ascii=False, sort_keys=True))
    return 0


def _add_generator_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--entity-model", help="entity-matcher 模型文件")
    parser.add_argument("--schema-model", help="schema-matcher 模型文件")
    parser.add_argument("--entity-weights", help="实体特征权重文件 phi1..phi7")
    parser.add_argument("--schema-weights", help="列名特征权重文件 phi1..phi5")
    parser.add_argument("--seed", type=int, help="随机种子（默认：42）")
    parser.add_argument("--config", help="key=value 格式的配置文件")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="tabgen - 结合表格语料与知识库，按关键词查询即时生成关系表"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="输出调试日志")
    subparsers = parser.add_subparsers(dest="command", required=True)

    build = subparsers.add_parser("build", help="构建索引包")
    build.add_argument("--tables", required=True, help="表格语料 tables.jsonl")
    build.add_argument("--kb", required=True, help="知识库 kb.jsonl")
    build.add_argument("--out", required=True, help="索引包输出目录")
    build.add_argument("--synonym-overrides", help="同义词覆盖文件（allow/deny）")
    build.add_argument("--synonym-threshold", type=int, help="同义词共现阈值（默认：3）")
    build.add_argument("--stopwords", help="停用词文件")
    build.add_argument("--config", help="key=value 格式的配置文件")

    generate = subparsers.add_parser("generate", help="为查询生成表格")
    generate.add_argument("bundle", help="索引包目录")
    query_group = generate.add_mutually_exclusive_group(required=True)
    query_group.add_argument("-q", "--query", help="查询文本")
    query_group.add_argument("--queries", help="查询文件，每行 qid<TAB>query")
    generate.add_argument("--format", choices=["json", "tsv"], default="json", help="输出格式（默认：json）")
    generate.add_argument("--rounds", type=int, help="迭代轮数（默认：3）")
    generate.add_argument("--k-feedback", type=int, help="每轮反馈的前k个结果（默认：10）")
    generate.add_argument("--entity-model", help="entity-matcher 模型文件")
    generate.add_argument("--schema-model", help="schema-matcher 模型文件")
    generate.add_argument("--entity-weights", help="实体特征权重文件 phi1..phi7")
    generate.add_argument("--schema-weights", help="列名特征权重文件 phi1..phi5")
    generate.add_argument("--hits-provider", choices=["null", "file"], help="搜索命中数来源（默认：null）")
    generate.add_argument("--hits-file", help="hits.tsv 路径")
    generate.add_argument("--lookup-sources", choices=["kb", "tc", "both"], help="取值来源（默认：both）")
    generate.add_argument("--threads", type=int, help="最大并发查询数（默认：CPU核数）")
    generate.add_argument("--seed", type=int, help="随机种子（默认：42）")
    generate.add_argument("--run-dir", help="写出每一轮排序结果的 run 文件目录")
    generate.add_argument("--config", help="key=value 格式的配置文件")

    train_parser = subparsers.add_parser("train", help="训练 DRRM_TKS 匹配模型")
    train_parser.add_argument("bundle", help="索引包目录")
    train_parser.add_argument("--task", required=True, choices=["schema-matcher", "entity-matcher"], help="训练任务")
    train_parser.add_argument("--out", required=True, help="模型输出路径")
    train_parser.add_argument("--lr", type=float, help="学习率（默认：0.0001）")
    train_parser.add_argument("--epochs", type=int, help="训练轮数（默认：50）")
    train_parser.add_argument("--embeddings", default="random", help="词向量来源: random / file:<路径> / remote")
    train_parser.add_argument("--loss-csv", help="损失曲线CSV路径")
    train_parser.add_argument("--seed", type=int, help="随机种子（默认：42）")
    train_parser.add_argument("--config", help="key=value 格式的配置文件")

    learn = subparsers.add_parser("learn", help="交叉验证学习特征权重")
    learn.add_argument("bundle", help="索引包目录")
    learn.add_argument("--queries", required=True, help="查询文件，每行 qid<TAB>query")
    learn.add_argument("--qrels", required=True, help="实体或列名的 qrels 文件")
    learn.add_argument("--task", choices=["entities", "labels"], default="entities", help="学习哪一组权重（默认：entities）")
    learn.add_argument("--round", type=int, default=0, help="在第几轮上计算特征（默认：0）")
    learn.add_argument("--out", required=True, help="权重文件输出路径")
    learn.add_argument("--folds", type=int, help="交叉验证折数（默认：5）")
    learn.add_argument("--k-feedback", type=int, help="每轮反馈的前k个结果（默认：10）")
    _add_generator_arguments(learn)

    rounds = subparsers.add_parser("rounds", help="比较不同反馈截断下每一轮的效果")
    rounds.add_argument("bundle", help="索引包目录")
    rounds.add_argument("--queries", required=True, help="查询文件，每行 qid<TAB>query")
    rounds.add_argument("--entity-qrels", required=True, help="实体 qrels 文件")
    rounds.add_argument("--label-qrels", required=True, help="列名 qrels 文件")
    rounds.add_argument("--rounds", type=int, help="迭代轮数（默认：3）")
    rounds.add_argument("--k-feedback", default="5,10,20", help="逗号分隔的反馈截断（默认：5,10,20）")
    _add_generator_arguments(rounds)

    evaluate = subparsers.add_parser("eval", help="评测 run 文件")
    evaluate.add_argument("run", help="run 文件")
    evaluate.add_argument("qrels", help="qrels 文件")
    evaluate.add_argument("--metrics", default=",".join(DEFAULT_METRICS), help="指标列表（默认：ndcg@5,ndcg@10,map,mrr）")
    evaluate.add_argument("--per-query", action="store_true", help="输出每个查询的指标")
    evaluate.add_argument("--baseline", help="基线 run 文件，统计提升/下降/不变的查询数")
    evaluate.add_argument("--format", choices=["tsv", "json"], default="tsv", help="输出格式（默认：tsv）")
    evaluate.add_argument("--config", help="key=value 配置文件（用于 HELPED_THRESHOLD）")
    return parser


async def main(argv: Optional[List[str]] = None) -> int:
    """主函数，处理命令行参数并执行相应操作"""
    # 确保输出使用UTF-8编码
    if hasattr(sys.stdout, "reconfigure"):
        try:
            sys.stdout.reconfigure(encoding="utf-8")  # type: ignore
        except Exception:
            pass

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        if args.command == "build":
            return cmd_build(args)
        if args.command == "generate":
            return await cmd_generate(args)
        if args.command == "train":
            return await cmd_train(args)
        if args.command == "learn":
            return cmd_learn(args)
        if args.command == "rounds":
            return cmd_rounds(args)
        return cmd_eval(args)
    except TableGenError as e:
        status(f"错误: {e}")
        return e.exit_code
    except Exception as e:
        status(f"执行过程中发生错误: {e}")
        return 1


if __name__ == "__main__":
    exit_code = asyncio.run(main())
    sys.exit(exit_code)
