"""
测试共用的小型语料：爱尔兰城镇表格与干扰用的专辑表格
"""

import json

import pytest

from table_generator import Config, TableGenerator, build_bundle

QUERY = "town ireland"

TOWNS = ["town:athlone", "town:cork", "town:galway", "town:sligo"]
ALBUMS = ["album:a1", "album:a2", "album:a3"]

TABLE_RECORDS = [
    {
        "id": "t1",
        "caption": "Towns in Ireland",
        "pageTitle": "List of towns in Ireland",
        "headings": ["Town", "County", "Population"],
        "rows": [
            [{"e": "town:cork", "t": "Cork"}, {"t": "Cork County"}, {"t": "210000"}],
            [{"e": "town:galway", "t": "Galway"}, {"t": "Galway County"}, {"t": "80000"}],
            [{"e": "town:sligo", "t": "Sligo"}, {"t": "Sligo County"}, {"t": "20000"}],
        ],
    },
    {
        "id": "t2",
        "caption": "Irish towns by county",
        "pageTitle": "Counties",
        "headings": ["Town", "County"],
        "rows": [
            [{"e": "town:athlone", "t": "Athlone"}, {"t": "Westmeath"}],
            [{"e": "town:galway", "t": "Galway"}, {"t": "Galway County"}],
        ],
    },
    {
        "id": "t3",
        "caption": "Albums by Band X",
        "pageTitle": "Discography",
        "headings": ["Album", "Artist", "Year"],
        "rows": [
            [{"e": "album:a1"}, {"t": "Band X"}, {"t": "1999"}],
            [{"e": "album:a2"}, {"t": "Band X"}, {"t": "2003"}],
            [{"e": "album:a3"}, {"t": "Band Y"}, {"t": "2010"}],
        ],
    },
    {
        "id": "t4",
        "caption": "Single row",
        "pageTitle": "Misc",
        "headings": ["Name", "Note"],
        "rows": [[{"e": "town:cork"}, {"t": "only one row"}]],
    },
]


def _town(name: str, population: str, county: str) -> dict:
    return {
        "id": f"town:{name.lower()}",
        "description": f"{name} is a town in Ireland.",
        "properties": {"country": ["Ireland"], "population": [population], "county": [county]},
    }


KB_RECORDS = [
    _town("Athlone", "15000", "Westmeath"),
    _town("Cork", "210000", "Cork County"),
    _town("Galway", "80000", "Galway County"),
    _town("Sligo", "20000", "Sligo County"),
    {
        "id": "album:a1",
        "description": "Town Ireland is an album by Band X about a town in Ireland.",
        "properties": {"artist": ["Band X"], "released": ["1999"]},
    },
    {
        "id": "album:a2",
        "description": "Second album by Band X.",
        "properties": {"artist": ["Band X"], "released": ["2003"]},
    },
    {
        "id": "album:a3",
        "description": "Debut album by Band Y.",
        "properties": {"artist": ["Band Y"], "released": ["2010"]},
    },
]

# 列名标准答案将城镇与专辑完全区分开
ENTITY_QRELS = {"q1": {**{e: 1 for e in TOWNS}, **{e: 0 for e in ALBUMS}}}
LABEL_QRELS = {"q1": {"Town": 2, "County": 1, "Population": 1, "Album": 0, "Artist": 0}}

ENTITY_WEIGHTS = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]
SCHEMA_WEIGHTS = [1.0, 1.0, 0.0, 0.0, 1.0]


def write_jsonl(path, records) -> str:
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")
    return str(path)


@pytest.fixture
def data_files(tmp_path):
    """写出 tables.jsonl 和 kb.jsonl，返回 (表格路径, 知识库路径)"""
    tables = write_jsonl(tmp_path / "tables.jsonl", TABLE_RECORDS)
    kb = write_jsonl(tmp_path / "kb.jsonl", KB_RECORDS)
    return tables, kb


@pytest.fixture
def bundle(data_files):
    built, _ = build_bundle(*data_files)
    return built


@pytest.fixture
def config():
    return Config(threads=2)


@pytest.fixture
def generator(bundle, config):
    return TableGenerator(
        bundle, config, entity_weights=ENTITY_WEIGHTS, schema_weights=SCHEMA_WEIGHTS
    )
