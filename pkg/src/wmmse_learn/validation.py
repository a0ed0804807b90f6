"""Input checks shared by the estimators and the CLI."""
from __future__ import annotations

import math

import numpy as np
from sklearn.utils.validation import check_array

from .instance import IC, IMAC


def check_gains(X, n_features=None) -> np.ndarray:
    """2-D float array of nonnegative, finite channel magnitudes."""
    X = check_array(X, dtype=np.float64, ensure_2d=True)
    if np.any(X < 0):
        raise ValueError("channel magnitudes must be nonnegative")
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"expected {n_features} features, got {X.shape[1]}")
    return X


def check_powers(P, p_max) -> np.ndarray:
    P = check_array(P, dtype=np.float64, ensure_2d=False)
    if np.any(P < 0) or np.any(P > p_max):
        raise ValueError(f"powers must lie in [0, {p_max}]")
    return P


def users_from_features(n_features, kind=IC, num_cells=None) -> int:
    """Number of users implied by a flattened gain vector."""
    if kind == IC:
        K = math.isqrt(n_features)
        if K * K != n_features:
            raise ValueError(f"{n_features} features is not a square IC gain matrix")
        return K
    if kind == IMAC:
        if not num_cells or n_features % num_cells:
            raise ValueError("IMAC features need num_cells dividing the feature count")
        return n_features // num_cells
    raise ValueError(f"unknown kind {kind!r}")


def check_scenario(kind, K, N=None, R=None, r=None):
    if K < 1:
        raise ValueError("K must be >= 1")
    if kind == IMAC:
        if N is None or N < 1 or K % N:
            raise ValueError("IMAC needs N >= 1 dividing K")
        if R is not None and r is not None and not 0 <= r < R:
            raise ValueError("IMAC needs 0 <= r < R")
    elif kind != IC:
        raise ValueError(f"unknown kind {kind!r}")
