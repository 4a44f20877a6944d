from __future__ import annotations

import json

import numpy as np
import pytest

from bridgelab.igsm import IgsmConfig, generate_igsm
from bridgelab.records import (DatasetError, default_seed, load_config, merge_config, read_binary,
                               read_dataset, read_header, read_jsonl, task_seed, write_binary,
                               write_dataset, write_jsonl)


@pytest.fixture
def tasks():
    return [generate_igsm(IgsmConfig(op_range=(4, 8)), seed=s) for s in range(3)]


class TestDataset:
    def test_roundtrip(self, tmp_path, tasks):
        write_dataset(tasks, tmp_path / "d.jsonl", {"family": "igsm"})
        assert read_dataset(tmp_path / "d.jsonl") == tasks
        assert read_header(tmp_path / "d.jsonl")["config"] == {"family": "igsm"}

    def test_bad_line_named(self, tmp_path, tasks):
        p = tmp_path / "d.jsonl"
        write_dataset(tasks, p)
        p.write_text(p.read_text() + "{not json\n")
        with pytest.raises(DatasetError, match=r":5:"):
            read_dataset(p)

    def test_tampered_value_fails_strict(self, tmp_path, tasks):
        p = tmp_path / "d.jsonl"
        write_dataset(tasks[:1], p)
        lines = p.read_text().splitlines()
        rec = json.loads(lines[1])
        rec["gold"] += 1
        p.write_text(lines[0] + "\n" + json.dumps(rec) + "\n")
        with pytest.raises(DatasetError, match="fails verification"):
            read_dataset(p)
        assert len(read_dataset(p, strict=False)) == 1

    def test_version_checked(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text(json.dumps({"schema": "bridgelab.dataset", "version": 99}) + "\n")
        with pytest.raises(DatasetError, match="version"):
            read_dataset(p)

    def test_no_temp_files_left(self, tmp_path, tasks):
        write_dataset(tasks, tmp_path / "d.jsonl")
        assert [p.name for p in tmp_path.iterdir()] == ["d.jsonl"]


def test_jsonl_roundtrip(tmp_path):
    rows = [{"b": 1, "a": [1, 2]}, {"x": "é"}]
    write_jsonl(rows, tmp_path / "r.jsonl")
    assert read_jsonl(tmp_path / "r.jsonl") == rows
    assert (tmp_path / "r.jsonl").read_text().splitlines()[0] == '{"a":[1,2],"b":1}'


class TestBinary:
    def test_roundtrip(self, tmp_path):
        arr = np.arange(12.0).reshape(3, 4)
        write_binary(tmp_path / "a.bin", {"kind": "x"}, arr)
        head, back = read_binary(tmp_path / "a.bin")
        assert head == {"kind": "x"} and np.array_equal(back, arr)

    def test_truncated(self, tmp_path):
        write_binary(tmp_path / "a.bin", {}, np.ones(3))
        raw = (tmp_path / "a.bin").read_bytes()
        (tmp_path / "a.bin").write_bytes(raw[:-3])
        with pytest.raises(ValueError):
            read_binary(tmp_path / "a.bin")

    def test_little_endian_payload(self, tmp_path):
        write_binary(tmp_path / "a.bin", {}, np.array([1.0]))
        assert (tmp_path / "a.bin").read_bytes().endswith(np.array([1.0], dtype="<f8").tobytes())


class TestConfig:
    def test_precedence(self):
        assert merge_config({"a": 1, "b": 1, "c": 1}, {"b": 2, "c": 2}, {"c": 3, "b": None}) == \
            {"a": 1, "b": 2, "c": 3}

    def test_yaml_and_json(self, tmp_path):
        (tmp_path / "c.yaml").write_text("count: 5\nop_range: [3, 4]\n")
        (tmp_path / "c.json").write_text('{"count": 5}')
        assert load_config(tmp_path / "c.yaml") == {"count": 5, "op_range": [3, 4]}
        assert load_config(tmp_path / "c.json") == {"count": 5}
        assert load_config(None) == {}

    def test_non_mapping(self, tmp_path):
        (tmp_path / "c.yaml").write_text("- 1\n- 2\n")
        with pytest.raises(ValueError):
            load_config(tmp_path / "c.yaml")


class TestSeeds:
    def test_env(self, monkeypatch):
        monkeypatch.setenv("BRIDGELAB_SEED", "17")
        assert default_seed() == 17
        monkeypatch.delenv("BRIDGELAB_SEED")
        assert default_seed(3) == 3

    def test_task_seed_stable_and_distinct(self):
        assert task_seed(0, 1) == task_seed(0, 1)
        assert len({task_seed(0, i) for i in range(1000)}) == 1000
