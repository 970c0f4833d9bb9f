"""
Helpers shared by the command handlers.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import TypeVar

from pydantic import BaseModel, ValidationError

from app.core.errors import UsageError

ModelT = TypeVar("ModelT", bound=BaseModel)


def parse_ids(text: str) -> list[int]:
    """'1,4,7' -> [1, 4, 7]."""
    try:
        ids = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated view ids, got {text!r}") from None
    if not ids:
        raise UsageError("empty view id list")
    if len(set(ids)) != len(ids):
        raise UsageError(f"duplicate view ids in {text!r}")
    return ids


def load_document(path: str | os.PathLike | None, schema: type[ModelT]) -> ModelT:
    """Validate a JSON document against a schema; no path gives the schema defaults."""
    if path is None:
        return schema()
    file = Path(path)
    if not file.exists():
        raise UsageError(f"{file}: no such file")
    try:
        return schema.model_validate_json(file.read_text())
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "document"
        raise UsageError(f"{file}: {where}: {first['msg']}") from None


def parse_kinds(text: str) -> list[str]:
    kinds = [part.strip() for part in text.split(",") if part.strip()]
    if not kinds:
        raise UsageError("empty op kind list")
    return kinds
