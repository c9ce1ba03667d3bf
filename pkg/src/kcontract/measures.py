"""Matrix measures, singular values and top-k eigenvalue sums (all L2-based)."""

from __future__ import annotations

import warnings

import numpy as np

from .compound import as_matrix

__all__ = [
    "mu2",
    "mu2_scaled",
    "lambda_max",
    "top_k_eig_sum",
    "bottom_k_eig_sum",
    "singular_values",
    "psd_tolerance",
    "symmetrize",
]

SINGULAR_RCOND = 1e-12
ASYMMETRY_RTOL = 1e-10


def _square(A, name="A"):
    A = as_matrix(A, name)
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square, got shape {A.shape}")
    return A


def symmetrize(S, name="S"):
    """Return the symmetric part of ``S``; warn if ``S`` was noticeably asymmetric."""
    S = _square(S, name)
    scale = max(1.0, float(np.abs(S).max()))
    asym = float(np.abs(S - S.T).max())
    if asym > ASYMMETRY_RTOL * scale:
        warnings.warn(
            f"{name} is not symmetric (max asymmetry {asym:.3e}); using its symmetric part",
            RuntimeWarning,
            stacklevel=3,
        )
    return 0.5 * (S + S.T)


def psd_tolerance(S):
    """Tolerance 1e-9 * max(1, ||S||_2) used for semidefiniteness decisions."""
    S = np.asarray(S, dtype=float)
    return 1e-9 * max(1.0, float(np.linalg.norm(S, 2)))


def lambda_max(S):
    """Largest eigenvalue of a symmetric matrix."""
    return float(np.linalg.eigvalsh(symmetrize(S))[-1])


def mu2(A):
    """Matrix measure induced by the Euclidean norm: lambda_max((A + A^T) / 2)."""
    A = _square(A)
    return float(np.linalg.eigvalsh(0.5 * (A + A.T))[-1])


def mu2_scaled(A, H):
    """Measure induced by the scaled norm |x|_{2,H} = |Hx|_2, i.e. mu2(H A H^-1)."""
    A = _square(A)
    H = _square(H, "H")
    if A.shape != H.shape:
        raise ValueError(f"A {A.shape} and H {H.shape} must have the same size")
    rcond = 1.0 / np.linalg.cond(H)
    if not np.isfinite(rcond) or rcond < SINGULAR_RCOND:
        raise np.linalg.LinAlgError(
            f"scaling matrix is singular or ill-conditioned (rcond={rcond:.3e})"
        )
    return mu2(H @ A @ np.linalg.inv(H))


def _check_k(k, n):
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")


def top_k_eig_sum(S, k):
    """Sum of the k largest eigenvalues of a symmetric matrix (Ky Fan k-sum)."""
    S = symmetrize(S)
    _check_k(k, S.shape[0])
    eig = np.linalg.eigvalsh(S)
    return float(eig[::-1][:k].sum())


def bottom_k_eig_sum(S, k):
    """Sum of the k smallest eigenvalues of a symmetric matrix."""
    S = symmetrize(S)
    _check_k(k, S.shape[0])
    return float(np.linalg.eigvalsh(S)[:k].sum())


def singular_values(A):
    """Singular values in descending order."""
    A = as_matrix(A)
    return np.linalg.svd(A, compute_uv=False)
