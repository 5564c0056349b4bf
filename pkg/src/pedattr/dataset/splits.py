"""Random and cross-domain (scene-disjoint) split protocols.

All randomness goes through ``numpy.random.default_rng(seed)`` (PCG64), whose
stream is fixed across platforms for a given seed and numpy major version.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .records import SampleRecord

RANDOM_SPLIT_COUNTS = (30298, 6002, 23822)
CROSS_DOMAIN_TRAIN = ("Construction Site", "Market", "Kitchens", "School", "Ski Resort")
CROSS_DOMAIN_TEST = ("Outdoors1", "Outdoors2", "Outdoors3")


class SplitError(ValueError):
    pass


def random_split(dataset: Sequence[SampleRecord], counts, seed: int = 0) -> list[SampleRecord]:
    """Assign exactly ``counts = (train, val, test)`` records by a seeded permutation."""
    counts = tuple(int(c) for c in counts)
    if len(counts) != 3 or min(counts) < 0:
        raise SplitError(f"counts must be three non-negative integers, got {counts}")
    if sum(counts) != len(dataset):
        raise SplitError(f"counts {counts} sum to {sum(counts)}, dataset has {len(dataset)} records")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    names = np.empty(len(dataset), dtype=object)
    n_train, n_val, _ = counts
    names[perm[:n_train]] = "train"
    names[perm[n_train:n_train + n_val]] = "val"
    names[perm[n_train + n_val:]] = "test"
    return [r.with_(split=s) for r, s in zip(dataset, names)]


def scene_split(
    dataset: Sequence[SampleRecord],
    train_scenes: Iterable[str] = CROSS_DOMAIN_TRAIN,
    test_scenes: Iterable[str] = CROSS_DOMAIN_TEST,
) -> list[SampleRecord]:
    train_scenes, test_scenes = set(train_scenes), set(test_scenes)
    overlap = train_scenes & test_scenes
    if overlap:
        raise SplitError(f"scenes in both train and test: {sorted(overlap)}")
    present = {r.scene for r in dataset}
    uncovered = present - train_scenes - test_scenes
    if uncovered:
        raise SplitError(f"scenes not assigned to either side: {sorted(uncovered)}")
    return [r.with_(split="train" if r.scene in train_scenes else "test") for r in dataset]


def split_counts(dataset: Sequence[SampleRecord]) -> dict[str, int]:
    out: dict[str, int] = {}
    for r in dataset:
        out[r.split] = out.get(r.split, 0) + 1
    return out


def select(dataset: Sequence[SampleRecord], split: str) -> list[SampleRecord]:
    if split == "all":
        return list(dataset)
    return [r for r in dataset if r.split == split]
