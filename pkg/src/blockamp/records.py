"""Line-delimited comma-separated record files shared by all subcommands."""
from __future__ import annotations

import csv
import os
from typing import Callable, Iterator, Sequence, TypeVar

T = TypeVar("T")


class InputError(Exception):
    """A malformed or missing input file; carries the path and line number."""

    def __init__(self, path, line: int | None, message: str):
        self.path = str(path)
        self.line = line
        self.message = message
        where = self.path if line is None else f"{self.path}:{line}"
        super().__init__(f"{where}: {message}")


class InvariantError(RuntimeError):
    """An internal consistency check failed (a bug, not bad input)."""


def iter_rows(path) -> Iterator[tuple[int, list[str]]]:
    """Yield ``(line_number, fields)``; blank lines and ``#`` comments skipped."""
    if not os.path.exists(path):
        raise InputError(path, None, "file not found")
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, skipinitialspace=True), start=1):
            if not row or not "".join(row).strip():
                continue
            if row[0].lstrip().startswith("#"):
                continue
            yield lineno, [c.strip() for c in row]


def read_records(path, parse: Callable[[list[str]], T], min_fields: int,
                 header_first: str | None = None) -> list[T]:
    """Parse every row with ``parse``; wrap failures as :class:`InputError`.

    A first row whose first field equals ``header_first`` is treated as a
    header and skipped.
    """
    out = []
    first = True
    for lineno, row in iter_rows(path):
        if first and header_first is not None and row[0] == header_first:
            first = False
            continue
        first = False
        if len(row) < min_fields:
            raise InputError(path, lineno, f"expected at least {min_fields} fields, got {len(row)}")
        try:
            out.append(parse(row))
        except (ValueError, KeyError) as exc:
            raise InputError(path, lineno, str(exc)) from None
    return out


def write_rows(path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(row)


def read_lines(path) -> list[str]:
    """Non-empty, non-comment stripped lines of a text file."""
    if not os.path.exists(path):
        raise InputError(path, None, "file not found")
    with open(path) as fh:
        return [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
