"""JSON-lines persistence with atomic writes and schema checks."""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
from collections.abc import Iterable
from pathlib import Path

from .exceptions import SchemaError

SCHEMA_VERSION = "1.0"


def dumps(record) -> str:
    return json.dumps(record, sort_keys=True, ensure_ascii=False)


def _atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_jsonl(path: str | Path, records: Iterable[dict]) -> str:
    """Write one JSON object per line, atomically; returns the file's sha256."""
    data = "".join(dumps(r) + "\n" for r in records).encode("utf-8")
    _atomic_write(Path(path), data)
    return hashlib.sha256(data).hexdigest()


def write_json(path: str | Path, obj) -> None:
    _atomic_write(Path(path), (json.dumps(obj, sort_keys=True, indent=2, ensure_ascii=False) + "\n").encode("utf-8"))


def check_schema(record: dict, where: str = "record") -> None:
    got = str(record.get("schema_version", ""))
    if got.split(".")[0] != SCHEMA_VERSION.split(".")[0]:
        raise SchemaError(f"{where}: unsupported schema_version {got!r} (this reader handles {SCHEMA_VERSION})")


def read_jsonl(path: str | Path, *, require_schema: bool = True) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: not valid JSON ({exc})") from None
            if require_schema:
                check_schema(record, f"{path}:{lineno}")
            out.append(record)
    return out


def read_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
