"""Input checks shared by estimators, transformers and the CLI."""

from __future__ import annotations

import numpy as np


def check_sequences(X, n_timesteps=None, n_features=None, allow_nan=False) -> np.ndarray:
    """Return ``X`` as a float64 ``[N, T, F]`` array or raise ``ValueError``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError(f"expected a 3-d [patients, time steps, features] array, got {X.ndim}-d")
    if 0 in X.shape:
        raise ValueError(f"empty input of shape {X.shape}")
    if n_timesteps is not None and X.shape[1] != n_timesteps:
        raise ValueError(f"expected T={n_timesteps} time steps, got {X.shape[1]}")
    if n_features is not None and X.shape[2] != n_features:
        raise ValueError(f"expected F={n_features} features, got {X.shape[2]}")
    if not allow_nan and not np.all(np.isfinite(X)):
        raise ValueError("input contains NaN or Inf")
    return X


def check_binary_labels(y, n_samples=None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"labels must be 1-d, got shape {y.shape}")
    if n_samples is not None and len(y) != n_samples:
        raise ValueError(f"{len(y)} labels for {n_samples} samples")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return y.astype(np.int64)


def check_both_classes(y) -> None:
    y = np.asarray(y)
    if not (np.any(y == 1) and np.any(y == 0)):
        raise ValueError("training data needs at least one example of each class")
