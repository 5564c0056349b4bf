"""Synthetic image degradation: blur, occlusion, illumination, noise, jpeg.

Degradations are recorded on the records and applied when pixels are
materialized; source images are never overwritten.
"""

from __future__ import annotations

import io
import math
from fractions import Fraction
from typing import Sequence

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter1d

from .records import DEGRADATION_KINDS, PARAM_RANGES, SPLITS, DegradationSpec, SampleRecord

# Ranges that assign_degradations samples from (subsets of PARAM_RANGES).
SAMPLING_RANGES = {
    "blur": {"sigma": (0.5, 3.0)},
    "occlusion": {"area": (0.05, 0.3)},
    "illumination": {"gain": (0.4, 1.6), "gamma": (0.6, 1.8)},
    "noise": {"sigma": (5.0, 30.0)},
    "jpeg": {"quality": (5, 50)},
}


class DegradationError(ValueError):
    pass


def check_spec(spec: DegradationSpec) -> None:
    if spec.kind not in PARAM_RANGES:
        raise DegradationError(f"unknown degradation kind {spec.kind!r}")
    ranges = PARAM_RANGES[spec.kind]
    for name, (lo, hi) in ranges.items():
        if name == "fill" and name not in spec.params:
            continue
        if name not in spec.params:
            raise DegradationError(f"{spec.kind}: missing parameter {name!r}")
        v = spec.params[name]
        if not (lo <= v <= hi) or (spec.kind == "occlusion" and name == "area" and v <= 0):
            raise DegradationError(f"{spec.kind}: {name}={v} outside [{lo}, {hi}]")
    if spec.kind == "jpeg" and int(spec.params["quality"]) != spec.params["quality"]:
        raise DegradationError("jpeg quality must be an integer")


def _sample_params(kind: str, rng: np.random.Generator) -> dict:
    out = {}
    for name, (lo, hi) in SAMPLING_RANGES[kind].items():
        if isinstance(lo, int) and isinstance(hi, int):
            out[name] = int(rng.integers(lo, hi + 1))
        else:
            out[name] = round(float(rng.uniform(lo, hi)), 4)
    return out


def n_degraded(n: int, fraction: float) -> int:
    """``ceil(fraction * n)`` computed on the rational value of ``fraction``."""
    frac = Fraction(fraction).limit_denominator(10**6)
    return math.ceil(frac * n)


def assign_degradations(dataset: Sequence[SampleRecord], fraction: float = 1 / 3, seed: int = 0) -> list[SampleRecord]:
    """Mark ``ceil(fraction * n_split)`` records of every split for degradation.

    Each split draws from its own stream derived from ``(seed, split)`` so a
    split's assignment does not depend on the other splits' sizes.
    """
    if not 0 <= fraction <= 1:
        raise DegradationError(f"fraction must be in [0, 1], got {fraction}")
    out = [r.with_(degradation=None) for r in dataset]
    for code, split in enumerate(SPLITS):
        idx = [i for i, r in enumerate(out) if r.split == split]
        if not idx:
            continue
        rng = np.random.default_rng([seed, code])
        k = n_degraded(len(idx), fraction)
        chosen = np.sort(rng.choice(len(idx), size=k, replace=False))
        for c in chosen:
            kind = DEGRADATION_KINDS[int(rng.integers(len(DEGRADATION_KINDS)))]
            params = _sample_params(kind, rng)
            spec = DegradationSpec(kind, params, int(rng.integers(0, 2**63 - 1)))
            out[idx[c]] = out[idx[c]].with_(degradation=spec)
    return out


def _rectangle(n_pixels: int, h: int, w: int) -> tuple[int, int]:
    """Rectangle dims with area exactly ``n_pixels`` and aspect closest to the image's."""
    best = None
    for rh in range(1, h + 1):
        if n_pixels % rh == 0 and n_pixels // rh <= w:
            rw = n_pixels // rh
            score = abs(math.log(rh / rw) - math.log(h / w))
            if best is None or score < best[0]:
                best = (score, rh, rw)
    return (best[1], best[2]) if best else (0, 0)


def _occlude(img: np.ndarray, area: float, fill: int, rng: np.random.Generator) -> np.ndarray:
    h, w = img.shape[:2]
    n = int(round(area * h * w))
    rh, rw = _rectangle(n, h, w)
    out = img.copy()
    if rh:
        top = int(rng.integers(0, h - rh + 1))
        left = int(rng.integers(0, w - rw + 1))
        out[top:top + rh, left:left + rw] = fill
        return out
    # n has no factorization fitting the frame: full rows plus one partial row.
    rw = w
    rh = n // rw
    extra = n - rh * rw
    top = int(rng.integers(0, h - rh - (1 if extra else 0) + 1))
    out[top:top + rh] = fill
    if extra:
        out[top + rh, :extra] = fill
    return out


def degrade_image(pixels: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Apply one degradation; output has the input's shape and dtype uint8."""
    check_spec(spec)
    img = np.asarray(pixels)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DegradationError(f"expected H x W x 3 image, got shape {img.shape}")
    if img.dtype != np.uint8:
        if img.min() < 0 or img.max() > 255:
            raise DegradationError("pixel values must lie in [0, 255]")
        img = img.astype(np.uint8)
    rng = np.random.default_rng(spec.seed)
    p = spec.params

    if spec.kind == "blur":
        if p["sigma"] == 0:
            return img.copy()
        x = img.astype(np.float64)
        x = gaussian_filter1d(x, p["sigma"], axis=0, mode="reflect")
        x = gaussian_filter1d(x, p["sigma"], axis=1, mode="reflect")
        return np.clip(np.rint(x), 0, 255).astype(np.uint8)
    if spec.kind == "occlusion":
        return _occlude(img, p["area"], int(p.get("fill", 0)), rng)
    if spec.kind == "illumination":
        x = (img.astype(np.float64) / 255.0) ** p["gamma"] * p["gain"] * 255.0
        return np.clip(np.rint(x), 0, 255).astype(np.uint8)
    if spec.kind == "noise":
        if p["sigma"] == 0:
            return img.copy()
        x = img.astype(np.float64) + rng.normal(0.0, p["sigma"], size=img.shape)
        return np.clip(np.rint(x), 0, 255).astype(np.uint8)
    # jpeg
    buf = io.BytesIO()
    Image.fromarray(img).save(buf, format="JPEG", quality=int(p["quality"]))
    buf.seek(0)
    return np.asarray(Image.open(buf).convert("RGB"), dtype=np.uint8).copy()
