"""Deterministic text sinks: atomic writes, CSV and JSONL with exact floats.

Floats are rendered with ``repr``, which in Python 3 emits the shortest
string that round-trips to the same double.  Identical runs therefore produce
byte-identical files, and readers recover the exact values.  All writers go
through a temp-file + ``os.replace`` dance so partially written outputs never
appear under the final name.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path


def fmt(value) -> str:
    """Canonical cell formatting: repr for floats, str otherwise."""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header: list[str], rows: list[tuple]) -> None:
    """CSV with a fixed header; each row is formatted cell-by-cell via fmt."""
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ValueError(f"row {i} has {len(row)} cells, header has {len(header)}")
    lines = [",".join(header)]
    lines.extend(",".join(fmt(c) for c in row) for row in rows)
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_jsonl(path, records: list[dict]) -> None:
    """One JSON object per line, keys in insertion order."""
    lines = [json.dumps(r, separators=(",", ":"), sort_keys=False) for r in records]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    text = Path(path).read_text()
    lines = [ln for ln in text.split("\n") if ln]
    if not lines:
        raise ValueError(f"empty CSV: {path}")
    header = lines[0].split(",")
    return header, [ln.split(",") for ln in lines[1:]]
