"""Input checking shared by the public entry points."""
from __future__ import annotations

import numpy as np


def as_vector(x, n: int | None = None, name: str = "x") -> np.ndarray:
    """Finite 1-D float array, optionally of length ``n``."""
    v = np.asarray(x, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    if n is not None and v.shape[0] != n:
        raise ValueError(f"{name} must have length {n}, got {v.shape[0]}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} contains non-finite entries")
    return v


def as_matrix(M, shape: tuple | None = None, name: str = "M") -> np.ndarray:
    A = np.asarray(M, dtype=float)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {A.shape}")
    if shape is not None and A.shape != tuple(shape):
        raise ValueError(f"{name} must have shape {tuple(shape)}, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite entries")
    return A


def as_samples(X, n_cols: int | None = None, name: str = "X") -> np.ndarray:
    """2-D sample array with one row per time step."""
    A = np.asarray(X, dtype=float)
    if A.ndim == 1:
        A = A[:, None]
    return as_matrix(A, None if n_cols is None else (A.shape[0], n_cols), name)


def as_psd(M, n: int | None = None, name: str = "M", tol: float = 1e-10) -> np.ndarray:
    """Symmetric positive semidefinite matrix; a 1-D input is read as a diagonal."""
    A = np.asarray(M, dtype=float)
    if A.ndim == 1:
        A = np.diag(A)
    A = as_matrix(A, None if n is None else (n, n), name)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square")
    scale = max(1.0, float(np.max(np.abs(A))))
    if np.max(np.abs(A - A.T)) > tol * scale:
        raise ValueError(f"{name} must be symmetric")
    A = 0.5 * (A + A.T)
    if A.size and np.linalg.eigvalsh(A)[0] < -tol * scale:
        raise ValueError(f"{name} must be positive semidefinite")
    return A


def check_positive(value, name: str) -> float:
    v = float(value)
    if not (np.isfinite(v) and v > 0):
        raise ValueError(f"{name} must be positive, got {value!r}")
    return v
