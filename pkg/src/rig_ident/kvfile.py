from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Tuple, Union

PathLike = Union[str, Path]


class KeyValueSyntaxError(ValueError):
    def __init__(self, source: str, line_no: int, message: str) -> None:
        super().__init__(f"{source}:{line_no}: {message}")
        self.source = source
        self.line_no = line_no


def parse_key_values(text: str, source: str = "<text>") -> List[Tuple[int, str, str]]:
    """Parse ``key = value`` lines. Returns (line number, key, raw value) triples.

    Blank lines and lines starting with ``#`` are skipped; a trailing
    ``# comment`` after a value is stripped. Repeated keys are an error.
    """
    entries: List[Tuple[int, str, str]] = []
    seen: Dict[str, int] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise KeyValueSyntaxError(source, line_no, f"expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.split("#", 1)[0].strip()
        if not key:
            raise KeyValueSyntaxError(source, line_no, "empty key")
        if key in seen:
            raise KeyValueSyntaxError(source, line_no, f"duplicate key {key!r} (first on line {seen[key]})")
        seen[key] = line_no
        entries.append((line_no, key, value))
    return entries


def read_key_values(path: PathLike) -> List[Tuple[int, str, str]]:
    path = Path(path)
    return parse_key_values(path.read_text(encoding="utf-8"), source=str(path))


def format_key_values(items: List[Tuple[str, str]]) -> str:
    width = max((len(key) for key, _ in items), default=0)
    return "\n".join(f"{key.ljust(width)} = {value}" for key, value in items) + "\n"
