"""Symmetric eigen and compact-SVD kernels for low-rank metric factors.

The influence computations downstream factor a p x p PSD metric G = L @ L.T
through its tall factor L (p x K, K small). Everything here is built so that
only K x K dense work ever happens: the compact eigenbasis of G is recovered
from the Gram matrix L.T @ L and mapped back through L. Outputs are made
deterministic across runs and platforms by a fixed eigenvector sign
convention (largest-magnitude entry of each retained column positive).
"""

from typing import NamedTuple

import numpy as np

# Retained directions must carry at least this fraction of the largest
# eigenvalue; below it they are treated as numerical rank deficiency.
RANK_TOL = 1e-10


class EigenResult(NamedTuple):
    eigenvalues: np.ndarray   # descending, shape (n,)
    eigenvectors: np.ndarray  # orthonormal columns, shape (n, n)


class CompactBasis(NamedTuple):
    u0: np.ndarray       # orthonormal columns, shape (p, r0)
    lambda0: np.ndarray  # positive eigenvalues of L @ L.T, descending, shape (r0,)
    rank: int


def _check_matrix(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-d matrix, got ndim={a.ndim}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite entries")
    return a


def _fix_signs(vecs):
    """Flip columns so the largest-magnitude entry of each is positive."""
    if vecs.size == 0:
        return vecs
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


# ==================== public kernels ====================


def sym_eig(a):
    """Eigendecomposition of a symmetric matrix, eigenvalues descending.

    Parameters
    ----------
    a : (n, n) array
        Symmetrized internally; must be square and finite.

    Returns
    -------
    EigenResult
        Eigenvalues in descending order and orthonormal eigenvector columns
        under the deterministic sign convention.
    """
    a = _check_matrix(a, "a")
    n, m = a.shape
    if n != m:
        raise ValueError(f"sym_eig needs a square matrix, got {a.shape}")
    vals, vecs = np.linalg.eigh((a + a.T) / 2.0)
    order = np.argsort(-vals, kind="stable")  # ties keep LAPACK order
    return EigenResult(vals[order], _fix_signs(vecs[:, order]))


def csvd_tall(l_mat, tol=RANK_TOL):
    """Compact eigenbasis of L @ L.T computed via the K x K Gram matrix.

    Eigenvalues of L.T @ L equal the nonzero eigenvalues of L @ L.T, and the
    corresponding p-dimensional eigenvectors are L @ v / sqrt(lambda). The
    mapped columns are re-orthonormalized (QR) to scrub floating-point drift,
    preserving order and the sign convention.

    Parameters
    ----------
    l_mat : (p, K) array
    tol : float
        Relative eigenvalue cutoff: keep lambda_i > tol * lambda_max.

    Returns
    -------
    CompactBasis
        (u0, lambda0, rank); rank 0 with empty factors for a zero matrix.
    """
    l_mat = _check_matrix(l_mat, "l_mat")
    p, k = l_mat.shape
    gram = l_mat.T @ l_mat  # (K, K)
    vals, vecs = sym_eig(gram)
    lam_max = vals[0] if vals.size else 0.0
    if lam_max <= 0.0:
        return CompactBasis(np.zeros((p, 0)), np.zeros(0), 0)
    keep = vals > tol * lam_max
    lam0 = vals[keep]
    u0 = (l_mat @ vecs[:, keep]) / np.sqrt(lam0)[None, :]
    q, r = np.linalg.qr(u0)
    q = q * np.sign(np.diag(r))[None, :]
    u0 = _fix_signs(q)
    return CompactBasis(u0, lam0, int(lam0.size))


def pinv_apply(u0, lambda0, v):
    """Apply the pseudoinverse of G = U0 diag(lambda0) U0.T to a vector.

    Components of ``v`` orthogonal to the retained columns are annihilated;
    an empty basis maps everything to zero.
    """
    u0 = _check_matrix(u0, "u0")
    lambda0 = np.asarray(lambda0, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != u0.shape[0]:
        raise ValueError(f"v must have length {u0.shape[0]}, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("v contains non-finite entries")
    if lambda0.size == 0:
        return np.zeros(u0.shape[0])
    return u0 @ ((u0.T @ v) / lambda0)
