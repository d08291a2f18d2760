"""Small dense linear-algebra helpers shared across modules."""

from __future__ import annotations

import warnings

import numpy as np

ASYMMETRY_WARN = 1e-8


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce ``a`` to a 2-D float array (scalars become 1x1)."""
    arr = np.asarray(a, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def max_abs(*mats) -> float:
    """Largest absolute entry over all given arrays (0 for empty input)."""
    return max((float(np.max(np.abs(m))) for m in mats if np.size(m)), default=0.0)


def sym(a: np.ndarray, name: str | None = None) -> np.ndarray:
    """Return ``(a + a.T) / 2``; warn when ``a`` was noticeably asymmetric."""
    a = np.asarray(a, dtype=float)
    if name is not None:
        scale = max(max_abs(a), 1.0)
        asym = max_abs(a - a.T) / scale if a.size else 0.0
        if asym > ASYMMETRY_WARN:
            warnings.warn(
                f"{name} asymmetric by {asym:.2e} (relative); symmetrized",
                RuntimeWarning,
                stacklevel=2,
            )
    return (a + a.T) / 2


def he(a):
    """Hermitian part times two, ``a + a.T``; works on arrays and cvxpy expressions."""
    return a + a.T


def lambda_max(a: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(sym(a))[-1])


def lambda_min(a: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(sym(a))[0])


def inv_checked(a: np.ndarray, name: str) -> np.ndarray:
    """Invert ``a`` or raise :class:`SingularMatrixError` naming it."""
    a = np.asarray(a, dtype=float)
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularMatrixError(name, cond)
    return np.linalg.inv(a)


class SingularMatrixError(np.linalg.LinAlgError):
    """A matrix that must be inverted is (numerically) singular."""

    def __init__(self, factor: str, cond: float):
        self.factor = factor
        self.cond = cond
        super().__init__(f"{factor} is singular (condition number {cond:.3e})")
