"""Atomic file writers and the CSV dialect used by every artifact.

CSV files are comma-separated with a header row, LF line endings and
17-significant-digit floats (lossless for binary64 round-trips).  Writers go
through a temp file in the destination directory and rename on success, so
no artifact is ever observed partially written.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Iterable, Sequence


def format_float(x: float) -> str:
    return f"{float(x):.17g}"


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp-{os.getpid()}")
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def rows_to_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(str(c) for c in row) for row in rows)
    atomic_write_text(path, "\n".join(lines) + "\n")
