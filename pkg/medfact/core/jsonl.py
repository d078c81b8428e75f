"""JSONL files with a one-line {schema, version} header, written atomically."""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional, Type, TypeVar

from pydantic import BaseModel, ValidationError

from medfact.core.errors import IoError, SchemaError

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1

M = TypeVar("M", bound=BaseModel)


def _dump(record: Any) -> str:
    if isinstance(record, BaseModel):
        record = record.model_dump(mode="json")
    return json.dumps(record, ensure_ascii=False, sort_keys=False)


def write_atomic(path: str | Path, text: str) -> None:
    """Write text to path through a temp file and rename."""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def write_jsonl(path: str | Path, schema: str, records: Iterable[Any]) -> int:
    """Write a header line plus one JSON line per record; returns the record count."""

    lines = [_dump({"schema": schema, "version": SCHEMA_VERSION})]
    count = 0
    for record in records:
        lines.append(_dump(record))
        count += 1
    write_atomic(path, "\n".join(lines) + "\n")
    logger.debug(f"Wrote {count} records to {path}", extra={"schema": schema})
    return count


def write_json(path: str | Path, payload: Any) -> None:
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode="json")
    write_atomic(path, json.dumps(payload, ensure_ascii=False, indent=2) + "\n")


def _is_header(record: Any) -> bool:
    return isinstance(record, dict) and set(record) == {"schema", "version"}


def iter_jsonl(path: str | Path, schema: Optional[str] = None) -> Iterator[tuple[int, Any]]:
    """Yield (line number, decoded value), skipping blank lines and the header record."""

    path = Path(path)
    try:
        f = open(path, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    with f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if _is_header(record):
                if schema is not None and record["schema"] != schema:
                    raise SchemaError(
                        f"{path}: expected schema '{schema}', found '{record['schema']}'"
                    )
                continue
            yield lineno, record


def read_jsonl(path: str | Path, schema: Optional[str] = None) -> list[Any]:
    return [record for _, record in iter_jsonl(path, schema)]


def read_models(path: str | Path, model: Type[M], schema: Optional[str] = None) -> list[M]:
    items: list[M] = []
    for lineno, record in iter_jsonl(path, schema):
        try:
            items.append(model.model_validate(record))
        except ValidationError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc.errors()[0]['msg']}") from exc
    return items
