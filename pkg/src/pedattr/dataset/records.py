"""Sample records, degradation specs and the tab-separated manifest format."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from ..schema import AttributeSchema, validate_labels

SCENES = (
    "Construction Site",
    "Market",
    "Kitchens",
    "School",
    "Ski Resort",
    "Outdoors1",
    "Outdoors2",
    "Outdoors3",
)
SPLITS = ("train", "val", "test", "unassigned")
DEGRADATION_KINDS = ("blur", "occlusion", "illumination", "noise", "jpeg")

# Accepted parameter ranges, closed unless noted in degrade.py.
PARAM_RANGES = {
    "blur": {"sigma": (0.0, 10.0)},
    "occlusion": {"area": (0.0, 0.5), "fill": (0, 255)},
    "illumination": {"gain": (0.1, 3.0), "gamma": (0.2, 5.0)},
    "noise": {"sigma": (0.0, 100.0)},
    "jpeg": {"quality": (5, 50)},
}


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class DegradationSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def to_json(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "seed": int(self.seed)}

    @classmethod
    def from_json(cls, d: dict) -> "DegradationSpec":
        return cls(d["kind"], dict(d.get("params", {})), int(d.get("seed", 0)))


@dataclass(frozen=True)
class SampleRecord:
    id: str
    image_ref: str
    labels: np.ndarray
    scene: str
    split: str = "unassigned"
    degradation: DegradationSpec | None = None

    def __post_init__(self):
        if self.scene not in SCENES:
            raise ManifestError(f"unknown scene {self.scene!r}")
        if self.split not in SPLITS:
            raise ManifestError(f"unknown split {self.split!r}")
        labels = np.asarray(self.labels, dtype=np.uint8)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def __eq__(self, other):
        if not isinstance(other, SampleRecord):
            return NotImplemented
        return (
            self.id == other.id
            and self.image_ref == other.image_ref
            and np.array_equal(self.labels, other.labels)
            and self.scene == other.scene
            and self.split == other.split
            and self.degradation == other.degradation
        )

    __hash__ = None

    def with_(self, **changes) -> "SampleRecord":
        return replace(self, **changes)


def label_matrix(dataset: Sequence[SampleRecord], n_attributes: int | None = None) -> np.ndarray:
    if not dataset:
        return np.zeros((0, n_attributes or 0), dtype=np.int64)
    return np.stack([r.labels for r in dataset]).astype(np.int64)


def labels_to_bits(labels) -> str:
    return "".join("1" if v else "0" for v in np.asarray(labels).astype(int))


def ingest_manifest(path, schema: AttributeSchema) -> list[SampleRecord]:
    """Read ``id<TAB>image<TAB>bits<TAB>scene`` rows; ``#`` lines are comments."""
    records = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 4:
                raise ManifestError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(cols)}")
            rid, image, bits, scene = cols
            if rid in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate id {rid!r}")
            if scene not in SCENES:
                raise ManifestError(f"{path}:{lineno}: unknown scene {scene!r}")
            if len(bits) != schema.n_attributes:
                raise ManifestError(
                    f"{path}:{lineno}: label length {len(bits)} != {schema.n_attributes}"
                )
            if set(bits) - {"0", "1"}:
                raise ManifestError(f"{path}:{lineno}: labels must be a 0/1 string")
            labels = np.frombuffer(bits.encode(), dtype=np.uint8) - ord("0")
            verdict = validate_labels(labels, schema)
            if not verdict:
                raise ManifestError(f"{path}:{lineno}: {verdict.reason}")
            seen.add(rid)
            records.append(SampleRecord(rid, image, labels, scene))
    return records


def write_manifest(dataset: Iterable[SampleRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in dataset:
            fh.write(f"{r.id}\t{r.image_ref}\t{labels_to_bits(r.labels)}\t{r.scene}\n")


def write_split_sidecar(dataset: Iterable[SampleRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in dataset:
            fh.write(f"{r.id}\t{r.split}\n")


def read_split_sidecar(dataset: Sequence[SampleRecord], path) -> list[SampleRecord]:
    splits = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rid, split = line.rstrip("\n").split("\t")
            if split not in SPLITS:
                raise ManifestError(f"{path}:{lineno}: unknown split {split!r}")
            splits[rid] = split
    return [r.with_(split=splits.get(r.id, r.split)) for r in dataset]


def write_degradation_sidecar(dataset: Iterable[SampleRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in dataset:
            if r.degradation is not None:
                fh.write(json.dumps({"id": r.id, **r.degradation.to_json()}, sort_keys=True) + "\n")


def read_degradation_sidecar(dataset: Sequence[SampleRecord], path) -> list[SampleRecord]:
    specs = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                specs[d["id"]] = DegradationSpec.from_json(d)
    return [r.with_(degradation=specs.get(r.id)) for r in dataset]


def load_dataset(manifest, schema: AttributeSchema, splits=None, degradations=None) -> list[SampleRecord]:
    """Manifest plus optional split / degradation sidecars next to it."""
    data = ingest_manifest(manifest, schema)
    if splits is not None and os.path.exists(splits):
        data = read_split_sidecar(data, splits)
    if degradations is not None and os.path.exists(degradations):
        data = read_degradation_sidecar(data, degradations)
    return data
