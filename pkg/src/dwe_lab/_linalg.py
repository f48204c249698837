"""Small dense linear-algebra helpers shared by the operator modules."""

from __future__ import annotations

import numpy as np

_EXACT_SVD_LIMIT = 1536


def spectral_norm(A: np.ndarray, tol: float = 1e-8, max_iter: int = 40,
                  block: int = 6) -> float:
    """Largest singular value of a dense matrix.

    Exact SVD below a size cutoff; above it, blocked subspace iteration on
    A^H A with Ritz extraction (converges to sigma_max from below, ample for
    the slope fits and norm bounds used here, and BLAS3-friendly).
    """
    A = np.ascontiguousarray(A)
    n = min(A.shape)
    if n == 0:
        return 0.0
    if max(A.shape) <= _EXACT_SVD_LIMIT:
        return float(np.linalg.svd(A, compute_uv=False)[0])
    rng = np.random.default_rng(1234)
    m = A.shape[1]
    V = rng.standard_normal((m, block)) + 1j * rng.standard_normal((m, block))
    V, _ = np.linalg.qr(V)
    last = 0.0
    for _ in range(max_iter):
        W = A @ V
        V2 = A.conj().T @ W
        # Ritz value of A^H A on the current subspace
        G = V.conj().T @ V2
        s2 = float(np.max(np.linalg.eigvalsh(0.5 * (G + G.conj().T)).real))
        if s2 <= 0.0:
            return 0.0
        s = np.sqrt(s2)
        V, _ = np.linalg.qr(V2)
        if abs(s - last) <= tol * max(s, 1e-300):
            return float(s)
        last = s
    return float(last)


def smallest_singular_value(A: np.ndarray) -> float:
    """Smallest singular value by full SVD (dense sizes only)."""
    return float(np.linalg.svd(A, compute_uv=False)[-1])


def hermitian_defect(A: np.ndarray) -> float:
    """Spectral-norm distance to the Hermitian part."""
    return spectral_norm(A - A.conj().T)
