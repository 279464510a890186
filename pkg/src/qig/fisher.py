"""Symmetric logarithmic derivatives and Fisher information matrices."""
from dataclasses import dataclass

import numpy as np

from . import numlin
from .errors import (
    InconsistentTangentError,
    InvalidInputError,
    InvalidPOVMError,
    SingularMetricError,
)
from .models import DensityMatrix

KERNEL_TOL = 1e-8
TRACELESS_TOL = 1e-8
PROBABILITY_FLOOR = 1e-12
COMPLETENESS_TOL = 1e-8
REPARAM_COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class SLDSet:
    """SLDs ``L_j`` of ``rho`` stacked as an ``(n, D, D)`` array.

    ``copies`` records the tensor power the operators act on and
    ``reparametrized`` whether they were transformed to unit QFIM.
    """

    ops: np.ndarray
    rho: DensityMatrix
    copies: int = 1
    reparametrized: bool = False
    kernel_convention: str = "zero"

    @property
    def n(self):
        return len(self.ops)

    def __len__(self):
        return len(self.ops)

    def __getitem__(self, j):
        return self.ops[j]


@dataclass(frozen=True, eq=False)
class FisherMatrix:
    matrix: np.ndarray
    kind: str = "quantum"
    copies: int = 1

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)

    @property
    def n(self):
        return self.matrix.shape[0]


def sld(rho, drho):
    """SLD ``L`` solving ``∂ρ = (ρL + Lρ)/2``; zero on ``ker ρ × ker ρ``."""
    drho = numlin.as_hermitian(drho)
    if drho.shape != rho.matrix.shape:
        raise InvalidInputError(f"tangent shape {drho.shape} does not match state {rho.matrix.shape}")
    tr = abs(np.trace(drho))
    if tr > TRACELESS_TOL:
        raise InconsistentTangentError(f"tangent is not traceless (|Tr| = {tr:.3e})")
    V = rho.eigenvectors
    lam = rho.eigenvalues
    D = V.conj().T @ drho @ V
    on_support = np.zeros(len(lam), dtype=bool)
    on_support[rho.support] = True
    both_kernel = ~on_support[:, None] & ~on_support[None, :]
    if both_kernel.any():
        leak = float(np.max(np.abs(D[both_kernel])))
        if leak > KERNEL_TOL:
            raise InconsistentTangentError(
                f"tangent has a kernel-to-kernel component of size {leak:.3e}"
            )
    denom = lam[:, None] + lam[None, :]
    L = np.where(both_kernel, 0.0, 2 * D / np.where(both_kernel, 1.0, denom))
    L = V @ L @ V.conj().T
    return (L + L.conj().T) / 2


def slds(rho, tangent):
    return SLDSet(np.array([sld(rho, D) for D in tangent]), rho)


def sld_residual(rho, drho, L):
    """Frobenius norm of ``∂ρ - (ρL + Lρ)/2``."""
    R = rho.matrix
    return numlin.frobenius(drho - (R @ L + L @ R) / 2)


def qfim(rho, sld_set):
    """``F_jk = ½ Tr[ρ(L_j L_k + L_k L_j)]``."""
    L = np.asarray(sld_set.ops)
    RL = np.einsum("ab,jbc->jac", rho.matrix, L)
    F = np.einsum("jab,kba->jk", RL, L).real
    F = (F + F.T) / 2
    return FisherMatrix(F, "quantum", getattr(sld_set, "copies", 1))


def tensor_tangent(tangent, rho, p):
    """Tangents of ``ρ^{⊗p}``: ``Σ_i ρ^{⊗(i-1)} ⊗ ∂ρ ⊗ ρ^{⊗(p-i)}``."""
    if p == 1:
        return np.asarray(tangent)
    R = rho.matrix
    d = R.shape[0]
    numlin.check_dim(d ** p, what=f"tensor power d^p = {d}^{p}")
    out = []
    for D in tangent:
        total = 0
        for i in range(p):
            factors = [R] * p
            factors[i] = D
            term = factors[0]
            for f in factors[1:]:
                term = np.kron(term, f)
            total = total + term
        out.append(total)
    return np.array(out)


def tensor_state(rho, tangent, p):
    """``(ρ^{⊗p}, ∂ρ^{⊗p})``."""
    return rho.tensor_power(p), tensor_tangent(tangent, rho, p)


def check_povm(elements, dim=None):
    E = np.asarray(elements, dtype=complex)
    if E.ndim != 3 or E.shape[1] != E.shape[2]:
        raise InvalidPOVMError(f"POVM elements must have shape (K, D, D), got {E.shape}")
    if dim is not None and E.shape[1] != dim:
        raise InvalidPOVMError(f"POVM acts on dimension {E.shape[1]}, state has dimension {dim}")
    defect = float(np.max(np.abs(E.sum(axis=0) - np.eye(E.shape[1]))))
    if defect > COMPLETENESS_TOL:
        raise InvalidPOVMError(f"POVM elements do not sum to identity (max deviation {defect:.3e})")
    return E


def outcome_probabilities(rho_matrix, elements):
    return np.einsum("ab,kba->k", rho_matrix, elements).real


def cfim(rho, tangent, povm):
    """Classical Fisher information of the outcome law ``Tr(ρ M_α)``.

    ``rho`` and ``tangent`` describe a single copy; when ``povm.p > 1`` the
    measurement acts on ``ρ^{⊗p}``. A state already of the POVM's dimension
    is used as-is. Outcomes with probability below ``1e-12`` are skipped.
    """
    elements = np.asarray(povm.elements)
    p = getattr(povm, "p", 1)
    tangent = np.asarray(tangent)
    if rho.dim != elements.shape[-1] and rho.dim ** p == elements.shape[-1]:
        rho, tangent = tensor_state(rho, tangent, p)
    E = check_povm(elements, rho.dim)
    probs = outcome_probabilities(rho.matrix, E)
    dprobs = np.einsum("jab,kba->kj", tangent, E).real
    keep = probs >= PROBABILITY_FLOOR
    g = dprobs[keep]
    F = (g / probs[keep][:, None]).T @ g
    return FisherMatrix((F + F.T) / 2, "classical", p)


def fidelity(rho1, rho2):
    """Root fidelity ``Tr√(√ρ₁ ρ₂ √ρ₁) = ‖√ρ₁√ρ₂‖₁`` clamped to ``[0, 1]``.

    The singular-value form avoids square roots of roundoff eigenvalues,
    which would otherwise add ``O(√ε)`` for pure states.
    """
    return float(np.clip(numlin.trace_norm(rho1.sqrt @ rho2.sqrt), 0.0, 1.0))


def bures_distance(rho1, rho2):
    if rho1.dim != rho2.dim:
        raise InvalidInputError(f"dimension mismatch: {rho1.dim} vs {rho2.dim}")
    return float(np.sqrt(max(0.0, 2 - 2 * fidelity(rho1, rho2))))


def metric_inv_sqrt(F, cond_limit=REPARAM_COND_LIMIT):
    """``F^{-1/2}`` for a QFIM, refusing ill-conditioned metrics."""
    F = np.asarray(F, dtype=float)
    w, V = np.linalg.eigh((F + F.T) / 2)
    if w[-1] <= 0 or w[0] <= w[-1] / cond_limit:
        cond = np.inf if w[0] <= 0 else w[-1] / w[0]
        raise SingularMetricError(
            f"QFIM is singular or ill-conditioned (condition number {cond:.3e} > {cond_limit:.0e})"
        )
    return (V / np.sqrt(w)) @ V.T


def metric_inverse(F, cond_limit=REPARAM_COND_LIMIT):
    S = metric_inv_sqrt(F, cond_limit)
    return S @ S


def reparametrized_slds(sld_set, F):
    """``L̃_j = Σ_k (F^{-1/2})_jk L_k``, the SLDs in coordinates where QFIM = I."""
    S = metric_inv_sqrt(F)
    ops = np.einsum("jk,kab->jab", S, sld_set.ops)
    return SLDSet(ops, sld_set.rho, sld_set.copies, True, sld_set.kernel_convention)


def tensor_slds(sld_set, p):
    """SLDs of ``ρ^{⊗p}``: ``L_jp = Σ_i I^{⊗(i-1)} ⊗ L_j ⊗ I^{⊗(p-i)}``."""
    if p == 1:
        return sld_set
    ops = np.array([numlin.tensor_sum(L, p) for L in sld_set.ops])
    return SLDSet(ops, sld_set.rho.tensor_power(p), sld_set.copies * p,
                  sld_set.reparametrized, sld_set.kernel_convention)


def f_im(rho, sld_set):
    """``(F_Im)_jk = Tr(ρ[L_j, L_k])/(2i) = Im Tr(ρ L_j L_k)``."""
    L = np.asarray(sld_set.ops)
    RL = np.einsum("ab,jbc->jac", rho.matrix, L)
    Z = np.einsum("jab,kba->jk", RL, L)
    A = Z.imag
    return (A - A.T) / 2


@dataclass(frozen=True)
class CommutatorReport:
    partial_max: float
    weak_max: float
    tolerance: float = 1e-9

    @property
    def partial_commutative(self):
        return self.partial_max <= self.tolerance

    @property
    def weak_commutative(self):
        return self.weak_max <= self.tolerance


def commutator_report(rho, sld_set, tolerance=1e-9):
    """Largest violations of the partial and weak commutative conditions."""
    L = np.asarray(sld_set.ops)
    V = rho.eigenvectors[:, rho.support]
    partial = 0.0
    weak = 0.0
    for j in range(len(L)):
        for k in range(j + 1, len(L)):
            C = L[j] @ L[k] - L[k] @ L[j]
            partial = max(partial, float(np.max(np.abs(V.conj().T @ C @ V))))
            weak = max(weak, abs(np.trace(rho.matrix @ C)))
    return CommutatorReport(partial, float(weak), tolerance)
