"""On-disk formats: JSONL datasets, binary array files, config files, seeds.

Binary files (gradient vectors, policy snapshots) are one JSON header line
followed by a little-endian float64 payload.
"""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

import numpy as np
import yaml

from .cot import Task

SCHEMA = "bridgelab.dataset"
SCHEMA_VERSION = 1
SEED_ENV = "BRIDGELAB_SEED"


class DatasetError(ValueError):
    pass


def atomic_write(path: str | Path, data: bytes | str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    raw = data.encode("utf-8") if isinstance(data, str) else data
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(raw)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


# ---------------------------------------------------------------- binary arrays

def write_binary(path: str | Path, header: Mapping, values: np.ndarray) -> None:
    arr = np.ascontiguousarray(values, dtype="<f8")
    head = dict(header, shape=list(arr.shape))
    atomic_write(path, dumps(head).encode("utf-8") + b"\n" + arr.tobytes())


def read_binary(path: str | Path) -> tuple[dict, np.ndarray]:
    raw = Path(path).read_bytes()
    cut = raw.find(b"\n")
    if cut < 0:
        raise ValueError(f"{path}: missing header line")
    header = json.loads(raw[:cut])
    body = raw[cut + 1:]
    if len(body) % 8:
        raise ValueError(f"{path}: payload is not a whole number of float64 values")
    arr = np.frombuffer(body, dtype="<f8").astype(np.float64)
    shape = tuple(header.pop("shape", (arr.size,)))
    if int(np.prod(shape)) != arr.size:
        raise ValueError(f"{path}: payload size {arr.size} does not match shape {shape}")
    return header, arr.reshape(shape)


# ---------------------------------------------------------------- datasets

def dataset_text(tasks: Iterable[Task], config: Mapping | None = None) -> str:
    lines = [dumps({"schema": SCHEMA, "version": SCHEMA_VERSION, "config": dict(config or {})})]
    lines += [dumps(t.to_dict()) for t in tasks]
    return "\n".join(lines) + "\n"


def write_dataset(tasks: Iterable[Task], path: str | Path, config: Mapping | None = None) -> None:
    atomic_write(path, dataset_text(tasks, config))


def iter_dataset(path: str | Path, strict: bool = True) -> Iterator[Task]:
    from .behaviors import cot_problems

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"{path}:{lineno}: unparseable record ({e.msg})") from None
            if lineno == 1 and rec.get("schema") == SCHEMA:
                if rec.get("version") != SCHEMA_VERSION:
                    raise DatasetError(f"{path}: unsupported schema version {rec.get('version')}")
                continue
            try:
                task = Task.from_dict(rec)
            except (KeyError, TypeError, ValueError) as e:
                raise DatasetError(f"{path}:{lineno}: malformed task record ({e!r})") from None
            if strict:
                problems = cot_problems(task)
                if problems:
                    raise DatasetError(f"{path}:{lineno}: task {task.id} fails verification: "
                                       + "; ".join(problems[:3]))
            yield task


def read_dataset(path: str | Path, strict: bool = True) -> list[Task]:
    return list(iter_dataset(path, strict))


def read_header(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        rec = json.loads(fh.readline())
    return rec if rec.get("schema") == SCHEMA else {}


def write_jsonl(rows: Iterable[Mapping], path: str | Path) -> None:
    atomic_write(path, "".join(dumps(r) + "\n" for r in rows))


def read_jsonl(path: str | Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as e:
                    raise DatasetError(f"{path}:{lineno}: unparseable record ({e.msg})") from None
    return out


# ---------------------------------------------------------------- config and seeds

def load_config(path: str | Path | None) -> dict:
    """YAML or JSON mapping (JSON is valid YAML); None gives {}."""
    if path is None:
        return {}
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"{path}: config must be a mapping")
    return data


def merge_config(defaults: Mapping, file_values: Mapping, flags: Mapping) -> dict:
    """Flags override file values, which override defaults. None flags are unset."""
    out = dict(defaults)
    out.update({k: v for k, v in file_values.items()})
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


def default_seed(fallback: int = 0) -> int:
    raw = os.environ.get(SEED_ENV)
    return int(raw) if raw not in (None, "") else fallback


def task_seed(corpus_seed: int, index: int) -> int:
    """Per-task seed from a counter: the first word of SeedSequence([seed, index])."""
    ss = np.random.SeedSequence([int(corpus_seed), int(index)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])
