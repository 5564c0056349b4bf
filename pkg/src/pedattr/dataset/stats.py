"""Label statistics: prevalence, pairwise co-occurrence, per-scene prevalence."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .records import SCENES, SampleRecord, label_matrix


def _labels(dataset, n_attributes=None) -> np.ndarray:
    if isinstance(dataset, np.ndarray):
        return dataset.astype(np.int64)
    return label_matrix(dataset, n_attributes)


def attribute_distribution(dataset: Sequence[SampleRecord] | np.ndarray, n_attributes: int | None = None) -> np.ndarray:
    return _labels(dataset, n_attributes).sum(axis=0)


def cooccurrence_matrix(dataset: Sequence[SampleRecord] | np.ndarray, n_attributes: int | None = None) -> np.ndarray:
    """``C[i, j]`` = number of records with both attributes set."""
    y = _labels(dataset, n_attributes)
    return y.T @ y


def scene_attribute_distribution(dataset: Sequence[SampleRecord], n_attributes: int | None = None) -> dict[str, np.ndarray]:
    """Per-scene positive counts for every scene present, in canonical scene order."""
    out = {}
    for scene in SCENES:
        rows = [r for r in dataset if r.scene == scene]
        if rows:
            out[scene] = attribute_distribution(rows)
    return out
