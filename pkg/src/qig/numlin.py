"""Dense complex Hermitian linear algebra.

Matrices are plain ``numpy`` arrays. Functions that expect a Hermitian
operator validate it with :func:`as_hermitian`, which symmetrizes inputs that
are Hermitian up to roundoff and rejects anything further away.
"""
import os
from functools import reduce

import numpy as np

from .errors import InvalidInputError, NotPSDError, ResourceLimitError

HERMITIAN_RTOL = 1e-12
PSD_CLAMP = -1e-10
PSD_ERROR = -1e-6
DEFAULT_MAX_DIM = 4096


def max_dim():
    """Largest operator dimension allowed; ``QIG_MAX_DIM`` overrides."""
    value = os.environ.get("QIG_MAX_DIM")
    if value is None:
        return DEFAULT_MAX_DIM
    try:
        limit = int(value)
    except ValueError as exc:
        raise InvalidInputError(f"QIG_MAX_DIM must be an integer, got {value!r}") from exc
    if limit < 1:
        raise InvalidInputError("QIG_MAX_DIM must be positive")
    return limit


def check_dim(dim, what="operator"):
    limit = max_dim()
    if dim > limit:
        raise ResourceLimitError(
            f"{what} dimension {dim} exceeds the limit {limit} (set QIG_MAX_DIM to raise it)"
        )


def as_matrix(A):
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2:
        raise InvalidInputError(f"expected a matrix, got array of shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise InvalidInputError("matrix has non-finite entries")
    return A


def as_hermitian(A):
    """Return ``(A + A†)/2`` after checking ``A`` is Hermitian within tolerance."""
    A = as_matrix(A)
    if A.shape[0] != A.shape[1]:
        raise InvalidInputError(f"expected a square matrix, got shape {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A), initial=0.0)))
    skew = float(np.max(np.abs(A - A.conj().T), initial=0.0))
    if skew > HERMITIAN_RTOL * scale:
        raise InvalidInputError(f"matrix is not Hermitian (max |A - A^H| = {skew:.3e})")
    return (A + A.conj().T) / 2


def dagger(A):
    return np.conj(np.swapaxes(A, -1, -2))


def eig_hermitian(A):
    """Eigenvalues (ascending) and unitary eigenvector matrix of Hermitian ``A``."""
    A = as_hermitian(A)
    w, V = np.linalg.eigh(A)
    return w, V


def _psd_eig(A):
    w, V = eig_hermitian(A)
    if w.size and w[0] < PSD_ERROR:
        raise NotPSDError(f"matrix is not positive semidefinite (min eigenvalue {w[0]:.3e})")
    return np.clip(w, 0.0, None), V


def psd_function(A, func):
    """Apply ``func`` to the spectrum of PSD ``A`` (negative roundoff clamped to 0)."""
    w, V = _psd_eig(A)
    return (V * func(w)) @ V.conj().T


def psd_sqrt(A):
    return psd_function(A, np.sqrt)


def inv_sqrt_pd(A, cond_limit=1e12):
    """``A^{-1/2}`` for a positive definite Hermitian ``A``.

    Returns ``None`` when the condition number exceeds ``cond_limit`` so
    callers can raise a context-specific error.
    """
    w, V = eig_hermitian(A)
    if w[-1] <= 0 or w[0] <= w[-1] / cond_limit:
        return None
    return (V / np.sqrt(w)) @ V.conj().T


def trace_norm(A):
    """Sum of singular values."""
    A = as_matrix(A)
    if A.size == 0:
        return 0.0
    return float(np.sum(np.linalg.svd(A, compute_uv=False)))


def frobenius(A):
    return float(np.linalg.norm(np.asarray(A)))


def kron(A, B):
    return np.kron(as_matrix(A), as_matrix(B))


def kron_power(A, p):
    """``A ⊗ A ⊗ ... ⊗ A`` with ``p`` factors."""
    A = as_matrix(A)
    if int(p) != p or p < 1:
        raise InvalidInputError(f"tensor power must be a positive integer, got {p}")
    p = int(p)
    check_dim(A.shape[0] ** p, what=f"tensor power d^p = {A.shape[0]}^{p}")
    return reduce(np.kron, [A] * p)


def tensor_sum(op, p):
    """``Σ_i I^{⊗(i-1)} ⊗ op ⊗ I^{⊗(p-i)}`` on ``p`` copies."""
    op = as_matrix(op)
    d = op.shape[0]
    check_dim(d ** p, what=f"tensor power d^p = {d}^{p}")
    total = np.zeros((d ** p, d ** p), dtype=complex)
    for i in range(p):
        total += np.kron(np.kron(np.eye(d ** i), op), np.eye(d ** (p - 1 - i)))
    return total


def gell_mann_basis(d):
    """Hilbert-Schmidt orthonormal Hermitian basis of d×d matrices.

    The first element is ``I/√d``; the remaining ``d² - 1`` are traceless
    generalized Gell-Mann matrices scaled to unit norm.
    """
    basis = [np.eye(d, dtype=complex) / np.sqrt(d)]
    for j in range(d):
        for k in range(j + 1, d):
            sym = np.zeros((d, d), dtype=complex)
            sym[j, k] = sym[k, j] = 1 / np.sqrt(2)
            asym = np.zeros((d, d), dtype=complex)
            asym[j, k] = -1j / np.sqrt(2)
            asym[k, j] = 1j / np.sqrt(2)
            basis.extend([sym, asym])
    for l in range(1, d):
        diag = np.zeros(d)
        diag[:l] = 1.0
        diag[l] = -l
        basis.append(np.diag(diag / np.sqrt(l * (l + 1))).astype(complex))
    return np.array(basis)


def random_hermitian(d, rng):
    G = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (G + G.conj().T) / 2


def random_unitary(d, rng):
    """Haar-random unitary via QR with phase correction."""
    G = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / np.sqrt(2)
    Q, R = np.linalg.qr(G)
    phases = np.diag(R) / np.abs(np.diag(R))
    return Q * phases


def random_isometry(rows, cols, rng):
    G = rng.normal(size=(rows, cols)) + 1j * rng.normal(size=(rows, cols))
    Q, R = np.linalg.qr(G)
    phases = np.diag(R) / np.abs(np.diag(R))
    return Q * phases


def random_density(d, rng, rank=None):
    rank = d if rank is None else rank
    G = rng.normal(size=(d, rank)) + 1j * rng.normal(size=(d, rank))
    rho = G @ G.conj().T
    return rho / np.trace(rho).real


def min_eig(A):
    """Smallest eigenvalue of a Hermitian (or real symmetric) matrix."""
    A = np.asarray(A)
    return float(np.linalg.eigvalsh((A + A.conj().T) / 2)[0])
