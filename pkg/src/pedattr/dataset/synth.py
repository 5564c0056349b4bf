"""Procedural stand-in images whose pixels encode their labels.

Each attribute owns one square cell on a regular grid; a positive attribute
lights its cell in its group's colour, a negative one leaves it dark. Scene
sets a faint background tint. Cells are laid out group by group in row-major
order, so a patch sees a handful of neighbouring attributes.
"""

from __future__ import annotations

import colorsys
import os

import numpy as np
from PIL import Image

from ..schema import AttributeSchema
from .records import SCENES, SampleRecord, write_manifest


def _cell_size(h: int, w: int, m: int) -> int:
    for s in range(min(h, w), 0, -1):
        if h % s == 0 and w % s == 0 and (h // s) * (w // s) >= m:
            return s
    raise ValueError(f"cannot fit {m} cells in a {h}x{w} image")


def _group_colors(k: int) -> np.ndarray:
    return np.array([colorsys.hsv_to_rgb(j / k, 0.8, 1.0) for j in range(k)]) * 230.0


def render(labels, schema: AttributeSchema, image_size=(128, 64), scene: str = SCENES[0],
           rng: np.random.Generator | None = None, noise: float = 6.0) -> np.ndarray:
    h, w = image_size
    m = schema.n_attributes
    s = _cell_size(h, w, m)
    cols = w // s
    tint = np.array(colorsys.hsv_to_rgb(SCENES.index(scene) / len(SCENES), 0.5, 1.0)) * 30.0
    img = np.broadcast_to(tint, (h, w, 3)).astype(np.float64).copy()
    colors = _group_colors(schema.n_groups)
    group_of = schema.group_of()
    for i in range(m):
        if labels[i]:
            r, c = divmod(i, cols)
            img[r * s:(r + 1) * s, c * s:(c + 1) * s] = colors[group_of[i]]
    if rng is not None and noise > 0:
        img += rng.normal(0.0, noise, size=img.shape)
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def synth_generate(n: int, schema: AttributeSchema, image_size=(128, 64), seed: int = 0,
                   positive_rate: float = 0.25):
    """Return ``(records, images)`` with ``images`` of shape (n, H, W, 3) uint8.

    Scenes are assigned round-robin; labels are i.i.d. Bernoulli(positive_rate).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    labels = (rng.random((n, schema.n_attributes)) < positive_rate).astype(np.uint8)
    records, images = [], []
    for i in range(n):
        scene = SCENES[i % len(SCENES)]
        rid = f"synth{i:06d}"
        records.append(SampleRecord(rid, f"images/{rid}.png", labels[i], scene))
        images.append(render(labels[i], schema, image_size, scene, rng))
    return records, np.stack(images)


def write_synthetic(out_dir, n: int, schema: AttributeSchema, image_size=(128, 64), seed: int = 0):
    """Write PNGs and ``manifest.tsv`` under ``out_dir``; returns the manifest path."""
    records, images = synth_generate(n, schema, image_size, seed)
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    for r, img in zip(records, images):
        Image.fromarray(img).save(os.path.join(out_dir, r.image_ref))
    path = os.path.join(out_dir, "manifest.tsv")
    write_manifest(records, path)
    return path
