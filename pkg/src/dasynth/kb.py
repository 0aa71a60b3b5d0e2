"""API knowledge base: ingestion, lookup, and export of symbol records.

The KB input format is UTF-8 JSON lines, one symbol per line with exactly
the keys name, kind, signature, description, category. Ingestion order is
preserved and the loaded knowledge base is immutable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .errors import DasynthError

KINDS = ("function", "type", "macro", "constant", "module")

_RECORD_KEYS = ("name", "kind", "signature", "description", "category")


class KnowledgeBaseError(DasynthError):
    """Raised for unreadable, malformed, or inconsistent KB input."""


@dataclass(frozen=True)
class ApiSymbol:
    name: str
    kind: str
    signature: str
    description: str
    category: str

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "signature": self.signature,
            "description": self.description,
            "category": self.category,
        }


class KnowledgeBase:
    """Immutable, ordered collection of ApiSymbols with exact-name lookup."""

    def __init__(self, symbols: Iterable[ApiSymbol]):
        self.symbols: tuple[ApiSymbol, ...] = tuple(symbols)
        if not self.symbols:
            raise KnowledgeBaseError("empty knowledge base")
        index: dict[str, int] = {}
        for pos, sym in enumerate(self.symbols):
            if sym.name in index:
                raise KnowledgeBaseError(
                    f"duplicate symbol name {sym.name!r} at record {pos + 1}"
                )
            index[sym.name] = pos
        self.name_index: dict[str, int] = index

    def __len__(self) -> int:
        return len(self.symbols)

    def __iter__(self) -> Iterator[ApiSymbol]:
        return iter(self.symbols)

    def __contains__(self, name: str) -> bool:
        return name in self.name_index

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeBase):
            return NotImplemented
        return self.symbols == other.symbols

    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.symbols)


def _parse_record(obj: object, where: str) -> ApiSymbol:
    if not isinstance(obj, dict):
        raise KnowledgeBaseError(f"{where}: record is not a JSON object")
    unknown = sorted(set(obj) - set(_RECORD_KEYS))
    if unknown:
        raise KnowledgeBaseError(f"{where}: unknown keys {unknown}")
    missing = [k for k in _RECORD_KEYS if k not in obj]
    if missing:
        raise KnowledgeBaseError(f"{where}: missing keys {missing}")
    for key in _RECORD_KEYS:
        if not isinstance(obj[key], str):
            raise KnowledgeBaseError(f"{where}: field {key!r} must be a string")
    name = obj["name"]
    if not name or any(c.isspace() for c in name):
        raise KnowledgeBaseError(f"{where}: name must be non-empty without whitespace")
    if obj["kind"] not in KINDS:
        raise KnowledgeBaseError(
            f"{where}: kind {obj['kind']!r} not one of {list(KINDS)}"
        )
    if not obj["description"]:
        raise KnowledgeBaseError(f"{where}: empty description for {name!r}")
    return ApiSymbol(
        name=name,
        kind=obj["kind"],
        signature=obj["signature"],
        description=obj["description"],
        category=obj["category"],
    )


def ingest(path: str | Path) -> KnowledgeBase:
    """Load and validate a JSON-lines KB file, preserving record order."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise KnowledgeBaseError(f"cannot read KB file {path}: {exc}") from exc

    symbols: list[ApiSymbol] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise KnowledgeBaseError(f"line {lineno}: invalid JSON: {exc}") from exc
        sym = _parse_record(obj, f"line {lineno}")
        if sym.name in seen:
            raise KnowledgeBaseError(
                f"line {lineno}: duplicate symbol name {sym.name!r} "
                f"(first seen at line {seen[sym.name]})"
            )
        seen[sym.name] = lineno
        symbols.append(sym)
    if not symbols:
        raise KnowledgeBaseError("empty knowledge base")
    return KnowledgeBase(symbols)


def lookup(kb: KnowledgeBase, name: str) -> Optional[ApiSymbol]:
    """Exact, case-sensitive name lookup; absence is None, never an error."""
    pos = kb.name_index.get(name)
    return None if pos is None else kb.symbols[pos]


def export(kb: KnowledgeBase, path: str | Path) -> None:
    """Write the KB back out as JSON lines; ingest(export(kb)) == kb."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for sym in kb.symbols:
            fh.write(json.dumps(sym.to_dict(), ensure_ascii=False) + "\n")
