"""Pixel loading with optional degradation applied at materialization time."""

from __future__ import annotations

import os
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .degrade import degrade_image
from .records import SampleRecord


class ImageLoadError(OSError):
    pass


def load_image(path, image_size=None) -> np.ndarray:
    """Read an RGB image as H x W x 3 uint8, resized to ``image_size = (H, W)`` if given."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if image_size is not None and im.size != (image_size[1], image_size[0]):
                im = im.resize((image_size[1], image_size[0]), Image.BILINEAR)
            return np.asarray(im, dtype=np.uint8).copy()
    except (FileNotFoundError, UnidentifiedImageError, OSError) as exc:
        raise ImageLoadError(f"cannot read image {path}: {exc}") from exc


def materialize(dataset: Sequence[SampleRecord], root, image_size=None, apply_degradation: bool = True) -> np.ndarray:
    out = []
    for r in dataset:
        img = load_image(os.path.join(root, r.image_ref), image_size)
        if apply_degradation and r.degradation is not None:
            img = degrade_image(img, r.degradation)
        out.append(img)
    return np.stack(out)
