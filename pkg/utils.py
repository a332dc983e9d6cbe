"""Utility helpers for routepredict."""

from __future__ import annotations

import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, TextIO


def _parse_floats(raw: str, sep_char: str = ",") -> tuple[float, ...]:
    """Parse ``1e-4,0.1,...`` into a tuple of floats, ignoring empty parts."""
    out: list[float] = []
    for part in filter(None, (p.strip() for p in raw.split(sep_char))):
        try:
            out.append(float(part))
        except ValueError as exc:
            raise ValueError(f"Invalid number '{part}' in list '{raw}'") from exc
    if not out:
        raise ValueError(f"Empty list '{raw}'")
    return tuple(out)


def _parse_dims(raw: str) -> tuple[int, int]:
    """Parse a ``W,H`` grid size."""
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 2:
        raise ValueError(f"Grid size must look like W,H, got '{raw}'")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError as exc:
        raise ValueError(f"Grid size must be two integers, got '{raw}'") from exc


@contextmanager
def open_output(path: str | Path) -> Iterator[TextIO]:
    """Open ``path`` for writing text; ``-`` means standard output."""
    if str(path) == "-":
        yield sys.stdout
        sys.stdout.flush()
        return
    target = Path(path)
    if target.parent and not target.parent.exists():
        target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8", newline="\n") as fh:
        yield fh
