"""Slice covariance and dominant eigenpair by power iteration."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 5000
DEFAULT_SEED = 0
DEFAULT_SQUARINGS = 6


class ConvergenceError(RuntimeError):
    """Power iteration ran out of iterations.

    Carries the last iterate so callers can inspect how close it got.
    """

    def __init__(self, message, value, vector, residual, iterations):
        super().__init__(message)
        self.value = value
        self.vector = vector
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class EigenPair:
    value: float
    vector: np.ndarray
    iterations: int = 0
    residual: float = 0.0


def covariance(s: np.ndarray) -> np.ndarray:
    """Return ``s.T @ s`` for a non-empty slice ``s``."""
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2 or s.size == 0:
        raise ValueError(f"expected a non-empty matrix, got shape {s.shape}")
    return s.T @ s


def start_vector(n: int, seed: int) -> np.ndarray:
    v = np.random.default_rng(seed).standard_normal(n)
    return v / np.linalg.norm(v)


def fix_sign(v: np.ndarray) -> np.ndarray:
    """Flip ``v`` so its largest-magnitude entry (lowest index on ties) is positive."""
    i = int(np.argmax(np.abs(v)))
    return -v if v[i] < 0 else v


def top_eigenpair(
    c: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = DEFAULT_SEED,
    squarings: int = DEFAULT_SQUARINGS,
) -> EigenPair:
    """Dominant eigenpair of the symmetric matrix ``c``.

    Power iteration is run on ``B = c^(2^squarings)`` (formed by repeated,
    Frobenius-normalized squaring), which has the same dominant eigenvector
    but turns a ratio ``r`` between the top two eigenvalues into
    ``r^(2^squarings)``. Stopping is always judged on ``c`` itself:

        ||c v - lam v|| <= tol * max(|lam|, 1),   lam = v' c v

    Parameters
    ----------
    c : (n, n) array
        Symmetric, finite matrix.
    tol : float
        Relative residual bound.
    max_iter : int
        Maximum number of iterations on ``B``.
    seed : int
        Seed of the pseudo-random unit start vector.
    squarings : int
        Number of squarings; 0 gives plain power iteration on ``c``.

    Raises
    ------
    ConvergenceError
        If the residual bound is not met after ``max_iter`` iterations.
    """
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1] or c.shape[0] == 0:
        raise ValueError(f"expected a non-empty square matrix, got shape {c.shape}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not np.all(np.isfinite(c)):
        raise ValueError("matrix entries must be finite")
    n = c.shape[0]

    scale = np.linalg.norm(c)
    if scale == 0.0:
        e0 = np.zeros(n)
        e0[0] = 1.0
        return EigenPair(0.0, e0, 0, 0.0)

    b = c / scale
    for _ in range(squarings):
        b = b @ b
        b /= np.linalg.norm(b)

    v = start_vector(n, seed)
    lam = 0.0
    residual = np.inf
    for it in range(1, max_iter + 1):
        w = c @ v
        lam = float(v @ w)
        residual = float(np.linalg.norm(w - lam * v))
        if residual <= tol * max(abs(lam), 1.0):
            return EigenPair(lam, fix_sign(v), it, residual)
        u = b @ v
        norm = np.linalg.norm(u)
        if norm == 0.0:
            # start vector orthogonal to everything B keeps; restart off-axis
            u = start_vector(n, seed + it)
            norm = 1.0
        v = u / norm
    raise ConvergenceError(
        f"power iteration did not converge in {max_iter} iterations "
        f"(residual {residual:.3e}, bound {tol * max(abs(lam), 1.0):.3e})",
        lam,
        fix_sign(v),
        residual,
        max_iter,
    )
