"""Append-only, line-per-record logs backing PerfDB, EDQ and the trust history.

Each line is comma-separated; floats are written with ``repr`` so that a
record read back compares equal to the one written.
"""

from __future__ import annotations

import os
import threading
from typing import Callable, Iterable, Optional, Sequence


def format_field(value) -> str:
    if isinstance(value, float):
        return repr(value)
    text = str(value)
    if "," in text or "\n" in text:
        raise ValueError(f"field {text!r} cannot contain commas or newlines")
    return text


class AppendLog:
    """Rows of fixed arity, mirrored to ``path`` when one is given."""

    def __init__(self, header: Sequence[str], path: Optional[str] = None, fresh: bool = False):
        self.header = tuple(header)
        self.path = path
        self._lock = threading.Lock()
        self._rows: list[tuple[str, ...]] = []
        if path is None:
            return
        if fresh or not os.path.exists(path):
            with open(path, "w") as fh:
                fh.write(",".join(self.header) + "\n")
            return
        with open(path) as fh:
            first = fh.readline().rstrip("\n")
            if first != ",".join(self.header):
                raise ValueError(f"{path}: unexpected header {first!r}")
            for lineno, line in enumerate(fh, start=2):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = tuple(line.split(","))
                if len(parts) != len(self.header):
                    raise ValueError(f"{path}:{lineno}: expected {len(self.header)} fields")
                self._rows.append(parts)

    def append(self, values: Iterable) -> None:
        row = tuple(format_field(v) for v in values)
        if len(row) != len(self.header):
            raise ValueError(f"expected {len(self.header)} fields, got {len(row)}")
        with self._lock:
            if self.path is not None:
                with open(self.path, "a") as fh:
                    fh.write(",".join(row) + "\n")
            self._rows.append(row)

    def rows(self) -> list[tuple[str, ...]]:
        with self._lock:
            return list(self._rows)

    def decode(self, parse: Callable[[tuple[str, ...]], object]) -> list:
        return [parse(row) for row in self.rows()]
