"""Newline-delimited and single-record JSON files.

Floats go through Python's shortest round-trip repr, so writing and
re-reading a record reproduces every value bit for bit; nothing here adds
timestamps or other run-varying fields.
"""

from __future__ import annotations

import json

__all__ = [
    "write_ndjson",
    "read_ndjson",
    "write_json",
    "read_json",
]


def write_ndjson(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


def read_ndjson(path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {line_no} is not valid JSON: {exc}") from None
    return records


def write_json(record, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON: {exc}") from None
