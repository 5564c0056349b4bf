"""Attribute vocabulary, group partition and label-vector validation."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, NamedTuple, Sequence

import numpy as np
import yaml

BUILTIN_SCHEMAS = {"msp60k": "msp60k.yaml"}


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class AttributeGroup:
    name: str
    member_indices: tuple[int, ...]
    question: str = ""

    def __post_init__(self):
        idx = self.member_indices
        if not idx:
            raise SchemaError(f"group {self.name!r} is empty")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise SchemaError(f"group {self.name!r} member indices must be strictly increasing")


@dataclass(frozen=True)
class AttributeSchema:
    """Ordered attributes partitioned into named groups.

    Attribute ``i`` is the ``i``-th name in ``attributes``; every attribute
    belongs to exactly one group.
    """

    attributes: tuple[str, ...]
    groups: tuple[AttributeGroup, ...]
    index_of: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.attributes)) != len(self.attributes):
            dup = sorted({a for a in self.attributes if self.attributes.count(a) > 1})
            raise SchemaError(f"duplicate attribute names: {dup}")
        m = len(self.attributes)
        seen: dict[int, str] = {}
        for g in self.groups:
            for i in g.member_indices:
                if not 0 <= i < m:
                    raise SchemaError(f"group {g.name!r} refers to attribute index {i} outside [0, {m})")
                if i in seen:
                    raise SchemaError(
                        f"attribute {self.attributes[i]!r} assigned to both {seen[i]!r} and {g.name!r}"
                    )
                seen[i] = g.name
        if len(seen) != m:
            missing = [self.attributes[i] for i in range(m) if i not in seen]
            raise SchemaError(f"attributes without a group: {missing}")
        if len({g.name for g in self.groups}) != len(self.groups):
            raise SchemaError("duplicate group names")
        object.__setattr__(self, "index_of", {a: i for i, a in enumerate(self.attributes)})

    @property
    def n_attributes(self) -> int:
        return len(self.attributes)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    def group_of(self) -> np.ndarray:
        """Group index of every attribute, shape (M,)."""
        out = np.empty(self.n_attributes, dtype=np.int64)
        for j, g in enumerate(self.groups):
            out[list(g.member_indices)] = j
        return out

    def group_names(self) -> list[str]:
        return [g.name for g in self.groups]

    def members(self, group: int | str) -> list[str]:
        g = self.groups[group] if isinstance(group, int) else self.groups[self.group_names().index(group)]
        return [self.attributes[i] for i in g.member_indices]

    def to_dict(self) -> dict:
        return {
            g.name: {"attributes": [self.attributes[i] for i in g.member_indices], "question": g.question}
            for g in self.groups
        }

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, allow_unicode=True, width=1000)


def schema_from_dict(doc: Mapping) -> AttributeSchema:
    """Build a schema from ``{group: {"attributes": [...], "question": str}}``.

    A bare list value is accepted as the attribute list. Attribute indices are
    assigned in document order.
    """
    if not isinstance(doc, Mapping) or not doc:
        raise SchemaError("schema document must be a non-empty mapping of group name -> attributes")
    attributes: list[str] = []
    owner: dict[str, str] = {}
    groups = []
    for name, body in doc.items():
        if isinstance(body, Mapping):
            members = body.get("attributes") or []
            question = str(body.get("question") or f"What about the {str(name).lower()}?")
        else:
            members, question = body or [], f"What about the {str(name).lower()}?"
        if isinstance(members, str) or not isinstance(members, Sequence):
            raise SchemaError(f"group {name!r}: attributes must be a list")
        if not members:
            raise SchemaError(f"group {name!r} is empty")
        idx = []
        for a in members:
            a = str(a)
            if a in owner:
                if owner[a] == name:
                    raise SchemaError(f"duplicate attribute {a!r} in group {name!r}")
                raise SchemaError(f"attribute {a!r} assigned to both {owner[a]!r} and {name!r}")
            owner[a] = str(name)
            idx.append(len(attributes))
            attributes.append(a)
        groups.append(AttributeGroup(str(name), tuple(idx), question))
    return AttributeSchema(tuple(attributes), tuple(groups))


def load_schema(source: str | os.PathLike | Mapping = "msp60k") -> AttributeSchema:
    """Load a schema from a built-in name, a YAML file path, YAML text or a mapping."""
    if isinstance(source, AttributeSchema):
        return source
    if isinstance(source, Mapping):
        return schema_from_dict(source)
    text = None
    if isinstance(source, str) and source in BUILTIN_SCHEMAS:
        text = resources.files("pedattr.data").joinpath(BUILTIN_SCHEMAS[source]).read_text()
    elif isinstance(source, os.PathLike) or (isinstance(source, str) and "\n" not in source and os.path.exists(source)):
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    elif isinstance(source, str) and ":" in source:
        text = source
    if text is None:
        raise SchemaError(f"cannot resolve schema source {source!r}")
    return schema_from_dict(yaml.safe_load(text))


class LabelVerdict(NamedTuple):
    valid: bool
    reason: str = ""

    def __bool__(self):
        return self.valid


def validate_labels(values, schema: AttributeSchema) -> LabelVerdict:
    """Check that ``values`` is a binary vector of length M. Never raises."""
    try:
        arr = np.asarray(values, dtype=float)
    except (TypeError, ValueError):
        return LabelVerdict(False, "not numeric")
    if arr.ndim != 1:
        return LabelVerdict(False, f"expected 1-d vector, got shape {arr.shape}")
    if arr.shape[0] != schema.n_attributes:
        return LabelVerdict(False, f"length {arr.shape[0]} != {schema.n_attributes}")
    if not np.all((arr == 0) | (arr == 1)):
        return LabelVerdict(False, "non-binary entries")
    return LabelVerdict(True)
