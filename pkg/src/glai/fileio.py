"""Atomic text writes: temp file in the target directory, then rename."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import Mapping


def _stage(path: Path, text: str) -> str:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except BaseException:
        os.unlink(tmp)
        raise
    return tmp


def write_text_atomic(path, text: str) -> None:
    write_all({path: text})


def write_all(outputs: Mapping[object, str]) -> None:
    """Write several files so that either all of them appear or none do.

    Every file is staged next to its target first; renames only start once
    all staging succeeded.
    """
    staged: list[tuple[str, Path]] = []
    try:
        for path, text in outputs.items():
            p = Path(path)
            staged.append((_stage(p, text), p))
    except BaseException:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)
        raise
    for tmp, p in staged:
        os.replace(tmp, p)
