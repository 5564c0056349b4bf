"""Input checks for the estimator API."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array


def check_images(X, image_size=None) -> np.ndarray:
    """Return ``X`` as a (N, H, W, 3) uint8 array, checking size if given."""
    X = np.asarray(X)
    if X.ndim == 3 and X.shape[-1] == 3:
        X = X[None]
    if X.ndim != 4 or X.shape[-1] != 3:
        raise ValueError(f"expected images of shape (N, H, W, 3), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError("no images given")
    if X.dtype != np.uint8:
        if not np.all(np.isfinite(X)) or X.min() < 0 or X.max() > 255:
            raise ValueError("pixel values must be finite and within [0, 255]")
        X = np.rint(X).astype(np.uint8)
    if image_size is not None and tuple(X.shape[1:3]) != tuple(image_size):
        raise ValueError(f"images are {X.shape[1:3]}, model expects {tuple(image_size)}")
    return X


def check_label_matrix(y, n_attributes: int | None = None, n_samples: int | None = None) -> np.ndarray:
    y = check_array(y, dtype=None, ensure_2d=True)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    if n_attributes is not None and y.shape[1] != n_attributes:
        raise ValueError(f"labels have {y.shape[1]} columns, schema has {n_attributes} attributes")
    if n_samples is not None and y.shape[0] != n_samples:
        raise ValueError(f"{y.shape[0]} label rows for {n_samples} images")
    return y.astype(np.int64)
