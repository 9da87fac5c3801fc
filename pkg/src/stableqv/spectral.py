"""Spectral analysis of QV matrices and first-order perturbation maps.

For a symmetric matrix A0 with distinct eigenvalues, a symmetric
perturbation dA moves the spectrum to first order by

    d lambda_i = v_i^T (dA) v_i,
    d v_i      = (lambda_i I - A0)^+ (dA) v_i,

where ^+ is the Moore-Penrose pseudoinverse.  These maps carry the limit
law of the QV estimation error over to eigenvalues and eigenvectors; they
are invalid at eigenvalue crossings, so a too-small gap raises instead of
returning a silent answer.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSpectrumError
from .qv import SymMatrix

# Relative eigenvalue cutoff for the spectral pseudoinverse.
PINV_TOL_REL = 1e-12
# linearize_spectrum refuses gaps below this multiple of trace(A0).
GAP_TOL_REL = 1e-8


def _as_full(A) -> np.ndarray:
    if isinstance(A, SymMatrix):
        return A.full
    a = np.asarray(A, dtype=float)
    return 0.5 * (a + a.T)


@dataclass
class EigenSystem:
    """Descending eigenvalues with sign-fixed orthonormal eigenvectors."""

    eigenvalues: np.ndarray  # (d,), descending
    vectors: np.ndarray  # (d, d), column i pairs with eigenvalues[i]
    gap: float  # min over consecutive pairs (inf when d == 1)
    min_eig: float


def eigen_sorted(A) -> EigenSystem:
    """Eigen-decomposition with descending order and a sign convention.

    The entry of largest magnitude of each eigenvector is made positive
    (ties resolved toward the lowest index), which pins the sign that an
    eigensolver otherwise leaves free.
    """
    a = _as_full(A)
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    lam, vec = np.linalg.eigh(a)
    lam = lam[::-1].copy()
    vec = vec[:, ::-1].copy()
    for i in range(vec.shape[1]):
        col = vec[:, i]
        if col[np.argmax(np.abs(col))] < 0:
            vec[:, i] = -col
    gap = float(np.min(-np.diff(lam))) if len(lam) > 1 else np.inf
    return EigenSystem(
        eigenvalues=lam, vectors=vec, gap=gap, min_eig=float(lam[-1])
    )


def pseudo_inverse(A, tol_rel: float = PINV_TOL_REL) -> SymMatrix:
    """Spectral Moore-Penrose pseudoinverse of a symmetric matrix.

    Eigenvalues with magnitude at most tol_rel times the largest are
    treated as zero (the zero matrix maps to the zero matrix).
    """
    es = eigen_sorted(A)
    lam = es.eigenvalues
    cut = tol_rel * float(np.max(np.abs(lam)))
    inv = np.zeros_like(lam)
    keep = np.abs(lam) > cut
    inv[keep] = 1.0 / lam[keep]
    return SymMatrix.from_array((es.vectors * inv) @ es.vectors.T)


def linearize_spectrum(A0, dA) -> tuple[np.ndarray, np.ndarray]:
    """First-order eigenvalue and eigenvector response to a perturbation.

    Returns (dlam, dV): dlam[i] = v_i^T dA v_i and column i of dV is
    (lambda_i I - A0)^+ dA v_i, evaluated in the eigenbasis of A0.  Each
    dV column is orthogonal to its eigenvector.  Raises
    DegenerateSpectrumError when the eigenvalue gap of A0 is below
    GAP_TOL_REL * trace(A0): the formulas break at crossings.
    """
    es = eigen_sorted(A0)
    a0 = _as_full(A0)
    thr = GAP_TOL_REL * abs(float(np.trace(a0)))
    if es.gap <= thr:
        raise DegenerateSpectrumError(
            f"eigenvalue gap {es.gap:.3e} is at or below threshold {thr:.3e}"
        )
    da = _as_full(dA)
    w = es.vectors.T @ da @ es.vectors  # dA in the eigenbasis
    dlam = np.diag(w).copy()
    lam = es.eigenvalues
    denom = lam[None, :] - lam[:, None]  # denom[j, i] = lambda_i - lambda_j
    np.fill_diagonal(denom, 1.0)
    coef = w / denom
    np.fill_diagonal(coef, 0.0)
    dvec = es.vectors @ coef
    return dlam, dvec


def spectral_limit_sample(qv, U_sample) -> tuple[np.ndarray, np.ndarray]:
    """Limit coordinates of the eigenvalue/eigenvector estimation error.

    For a QV matrix with distinct positive eigenvalues and a draw U of the
    matrix limit law, returns ((v_i^T U v_i)_i, ((lambda_i I - qv)^+ U v_i)_i),
    which is exactly the first-order spectrum response to U.
    """
    return linearize_spectrum(qv, U_sample)
