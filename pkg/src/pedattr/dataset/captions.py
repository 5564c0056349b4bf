"""Template captions built from label vectors, and their exact inverse.

Grammar (one clause per group, schema order)::

    caption := clause (" " clause)*
    clause  := group ": " (items | "no visible attributes") "."
    items   := attribute (", " attribute)*

Group and attribute names are lower-cased.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from ..schema import AttributeSchema

NONE_PHRASE = "no visible attributes"
_TOKEN_RE = re.compile(r"[a-z0-9]+|[^\sa-z0-9]")


class CaptionParseError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lower-case words and single punctuation marks."""
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens) -> str:
    text = " ".join(tokens)
    text = re.sub(r" ([.,:;?!])", r"\1", text)
    return re.sub(r" ' ", "'", text)


@dataclass(frozen=True)
class Caption:
    text: str
    source_labels: np.ndarray


def build_caption(labels, schema: AttributeSchema) -> Caption:
    y = np.asarray(labels).astype(int)
    clauses = []
    for g in schema.groups:
        present = [schema.attributes[i].lower() for i in g.member_indices if y[i]]
        body = ", ".join(present) if present else NONE_PHRASE
        clauses.append(f"{g.name.lower()}: {body}.")
    return Caption(" ".join(clauses), y.astype(np.uint8))


def _clause_tables(schema: AttributeSchema):
    tables = []
    for g in schema.groups:
        names = {tuple(tokenize(schema.attributes[i])): i for i in g.member_indices}
        tables.append((tuple(tokenize(g.name)), names))
    return tables


def _parse_clause(tokens, head, names, y, strict=True):
    """Parse one clause body (tokens between ':' and '.'); fills ``y``."""
    if tuple(tokens) == tuple(tokenize(NONE_PHRASE)):
        return
    items, cur = [], []
    for t in tokens:
        if t == ",":
            items.append(tuple(cur))
            cur = []
        else:
            cur.append(t)
    items.append(tuple(cur))
    for item in items:
        if not strict and (item not in names or y[names[item]]):
            continue
        if item not in names:
            raise CaptionParseError(f"unknown attribute {' '.join(item)!r} in clause {' '.join(head)!r}")
        if y[names[item]]:
            raise CaptionParseError(f"attribute {' '.join(item)!r} repeated")
        y[names[item]] = 1


def parse_caption(text: str, schema: AttributeSchema, strict: bool = True) -> np.ndarray:
    """Invert :func:`build_caption`.

    With ``strict=False`` malformed, missing or repeated clauses are skipped
    (their attributes read as absent) instead of raising; used to score free
    generations.
    """
    tokens = tokenize(text) if isinstance(text, str) else list(text)
    tables = _clause_tables(schema)
    y = np.zeros(schema.n_attributes, dtype=np.uint8)
    # split into clauses at '.'
    clauses, cur = [], []
    for t in tokens:
        if t == ".":
            clauses.append(cur)
            cur = []
        else:
            cur.append(t)
    if cur:
        if strict:
            raise CaptionParseError("caption does not end with '.'")
        clauses.append(cur)
    if strict and len(clauses) != len(tables):
        raise CaptionParseError(f"expected {len(tables)} clauses, found {len(clauses)}")
    done = set()
    for pos, clause in enumerate(clauses):
        if ":" not in clause:
            if strict:
                raise CaptionParseError(f"clause {pos} has no ':'")
            continue
        colon = clause.index(":")
        head, body = tuple(clause[:colon]), clause[colon + 1:]
        j = next((k for k, (h, _) in enumerate(tables) if h == head), None)
        if strict and (j is None or j != pos):
            raise CaptionParseError(f"clause {pos}: expected group {' '.join(tables[pos][0])!r}, got {' '.join(head)!r}")
        if j is None or j in done:
            continue
        _parse_clause(body, head, tables[j][1], y, strict)
        done.add(j)
    return y
