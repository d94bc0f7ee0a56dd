"""Dense symmetric-matrix helpers.

Symmetric matrices are plain ``numpy`` float arrays of shape ``(n, n)``;
``as_sym`` is the single entry point that validates and copies them.
"""
from __future__ import annotations

import numpy as np

SymMatrix = np.ndarray


class NumericalFailure(RuntimeError):
    """Raised when a numerical routine cannot produce a trustworthy answer."""


def as_sym(M, name: str = "matrix") -> SymMatrix:
    """Return a float copy of ``M`` with exactly symmetric storage.

    ``M`` must be square and symmetric up to a relative round-off of 1e-9.
    """
    a = np.array(M, dtype=float, ndmin=2)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValueError(f"{name}: expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name}: entries must be finite")
    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(a - a.T).max() > 1e-9 * scale:
        raise ValueError(f"{name}: matrix is not symmetric")
    return symmetrize(a)


def symmetrize(M: np.ndarray) -> np.ndarray:
    """(M + M^T)/2 on the last two axes; bitwise symmetric since IEEE addition commutes."""
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def min_eig(M) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    a = np.asarray(M, dtype=float)
    try:
        return float(np.linalg.eigvalsh(a)[0])
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"eigenvalue iteration did not converge: {exc}") from exc


def is_psd(M, tol: float = 0.0) -> bool:
    """True iff lambda_min(M) >= -tol."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    return min_eig(M) >= -tol


def sym_dim(n: int) -> int:
    """Number of free entries of an order-n symmetric matrix."""
    return n * (n + 1) // 2


def triu_pairs(n: int) -> list[tuple[int, int]]:
    """Row-major upper-triangle index pairs (i <= j), the svec ordering used throughout."""
    return [(i, j) for i in range(n) for j in range(i, n)]


def svec_basis(n: int) -> np.ndarray:
    """Basis E_k of S^n with X = sum_k x_k E_k for the upper-triangle entries x_k.

    Off-diagonal basis elements carry a one in both mirrored positions, so the
    coordinate x_k equals the matrix entry itself (no sqrt(2) scaling).
    """
    pairs = triu_pairs(n)
    E = np.zeros((len(pairs), n, n))
    for k, (i, j) in enumerate(pairs):
        E[k, i, j] = 1.0
        E[k, j, i] = 1.0
    return E


def smat(x: np.ndarray, n: int) -> SymMatrix:
    """Inverse of the upper-triangle coordinate map."""
    X = np.zeros((n, n))
    iu = np.triu_indices(n)
    X[iu] = x
    X[(iu[1], iu[0])] = x
    return X


def svec(X: np.ndarray) -> np.ndarray:
    return np.asarray(X)[np.triu_indices(X.shape[0])].copy()
