import json

import pytest

from scmgym import GymConfig
from scmgym.exceptions import ConfigError, SchemaError
from scmgym.persist import file_sha256, read_jsonl, write_jsonl


def test_defaults_are_valid():
    cfg = GymConfig()
    assert cfg.per_task == 2500 and cfg.max_nodes == 10
    assert [t.value for t in cfg.task_list] == ["ATE", "CDE", "ETT", "NDE", "NIE", "PN", "PS"]


@pytest.mark.parametrize("changes, field", [
    ({"tasks": ["ATE", "XYZ"]}, "tasks"),
    ({"per_task": 0}, "per_task"),
    ({"max_nodes": 20}, "max_nodes"),
    ({"edge_density": 1.5}, "edge_density"),
    ({"weight_range": [0.0, 1.0]}, "weight_range"),
    ({"mode_mix": {"Dreamy": 1.0}}, "mode_mix"),
    ({"answer_mode": "fuzzy"}, "answer_mode"),
    ({"rewriter": "oracle"}, "rewriter"),
    ({"llm_temperature": 3.0}, "llm_temperature"),
])
def test_invalid_fields_are_named(changes, field):
    with pytest.raises(ConfigError) as info:
        GymConfig(**changes)
    assert field in str(info.value)


def test_several_problems_are_reported_together():
    with pytest.raises(ConfigError) as info:
        GymConfig(per_task=0, retry_cap=0)
    assert "per_task" in str(info.value) and "retry_cap" in str(info.value)


def test_from_dict_rejects_unknown_keys_and_types():
    with pytest.raises(ConfigError):
        GymConfig.from_dict({"per_taks": 3})
    with pytest.raises(ConfigError):
        GymConfig.from_dict({"per_task": "3"})
    with pytest.raises(ConfigError):
        GymConfig.from_dict({"per_task": True})
    assert GymConfig.from_dict({"edge_density": 1}).edge_density == 1.0


def test_load_and_round_trip(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"seed": 9, "tasks": ["PN"]}))
    cfg = GymConfig.load(path)
    assert cfg.seed == 9 and cfg.tasks == ["PN"]
    assert GymConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.digest() == GymConfig.from_dict(cfg.to_dict()).digest() != GymConfig().digest()
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        GymConfig.load(path)


def test_llm_endpoint_from_environment(monkeypatch):
    monkeypatch.setenv("GYM_LLM_URL", "http://localhost:1")
    monkeypatch.setenv("GYM_LLM_KEY", "sk-zz-secret")
    assert GymConfig.llm_endpoint() == ("http://localhost:1", "sk-zz-secret")
    assert "sk-zz-secret" not in json.dumps(GymConfig().to_dict())


def test_jsonl_round_trip_and_digest(tmp_path):
    path = tmp_path / "out" / "x.jsonl"
    rows = [{"schema_version": "1.0", "b": 2, "a": 1}, {"schema_version": "1.3", "a": "é"}]
    digest = write_jsonl(path, rows)
    assert digest == file_sha256(path)
    assert read_jsonl(path) == rows
    assert path.read_text(encoding="utf-8").splitlines()[0] == '{"a": 1, "b": 2, "schema_version": "1.0"}'
    assert not [p for p in path.parent.iterdir() if p.name.endswith(".tmp")]


def test_reader_rejects_other_schema_versions(tmp_path):
    path = tmp_path / "x.jsonl"
    write_jsonl(path, [{"schema_version": "2.0"}])
    with pytest.raises(SchemaError):
        read_jsonl(path)
    assert read_jsonl(path, require_schema=False) == [{"schema_version": "2.0"}]
    path.write_text("{broken\n")
    with pytest.raises(SchemaError):
        read_jsonl(path)
