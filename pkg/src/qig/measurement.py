"""POVMs and numerical search for the best p-local measurement.

A POVM with ``K`` outcomes on a ``D``-dimensional space is parametrized by
an unconstrained complex matrix ``A`` of shape ``(K·D, D)``. Its polar factor
``V = A (A†A)^{-1/2}`` is an isometry, and the elements ``M_α = V_α† V_α``
(``V_α`` the α-th ``D×D`` block row) are PSD and sum to the identity by
construction. The search runs L-BFGS on ``A`` with exact gradients.
"""
import hashlib
import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import numlin
from .errors import InvalidInputError, InvalidPOVMError, ResourceLimitError, SearchError
from .fisher import (
    PROBABILITY_FLOOR,
    cfim,
    check_povm,
    metric_inverse,
    qfim,
    slds,
    tensor_state,
)
from .models import evaluate, tangent

PSD_TOL = -1e-9
MAX_SEARCH_ENTRIES = 5_000_000


@dataclass(frozen=True, eq=False)
class Povm:
    """Measurement ``{M_α}`` acting on ``p`` copies (dimension ``d^p``)."""

    elements: np.ndarray
    p: int = 1

    def __post_init__(self):
        E = check_povm(self.elements)
        for a, M in enumerate(E):
            if numlin.min_eig(M) < PSD_TOL:
                raise InvalidPOVMError(f"POVM element {a} is not PSD")
        object.__setattr__(self, "elements", E)

    @property
    def K(self):
        return self.elements.shape[0]

    @property
    def dim(self):
        return self.elements.shape[1]

    def probabilities(self, rho_matrix):
        return np.einsum("ab,kba->k", rho_matrix, self.elements).real

    def to_json(self):
        return {
            "dim": self.dim,
            "p": self.p,
            "K": self.K,
            "elements": [[M.real.tolist(), M.imag.tolist()] for M in self.elements],
        }

    @classmethod
    def from_json(cls, data):
        try:
            elements = np.array([np.array(re) + 1j * np.array(im) for re, im in data["elements"]])
            povm = cls(elements, int(data.get("p", 1)))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidPOVMError(f"malformed POVM JSON: {exc}") from exc
        if "dim" in data and data["dim"] != povm.dim:
            raise InvalidPOVMError(f"POVM JSON dim {data['dim']} does not match elements {povm.dim}")
        if "K" in data and data["K"] != povm.K:
            raise InvalidPOVMError(f"POVM JSON K {data['K']} does not match {povm.K} elements")
        return povm

    def digest(self):
        return hashlib.sha256(np.ascontiguousarray(self.elements).tobytes()).hexdigest()[:16]


def _blocks_to_elements(V, K, D):
    Vb = V.reshape(K, D, D)
    return np.conj(np.swapaxes(Vb, 1, 2)) @ Vb


def random_povm(dim, K, seed=None, p=1, projective=False):
    """Random POVM from a random isometry ``dim → K·dim``.

    With ``projective=True`` (requires ``K == dim``) the elements are rank-1
    projectors onto the columns of a random unitary.
    """
    if K < 2:
        raise InvalidInputError("a POVM needs at least two outcomes")
    rng = np.random.default_rng(seed)
    if projective:
        if K != dim:
            raise InvalidInputError("projective POVMs need K == dim")
        U = numlin.random_unitary(dim, rng)
        return Povm(np.einsum("ik,jk->kij", U, U.conj()), p)
    if K * dim * dim > MAX_SEARCH_ENTRIES:
        raise ResourceLimitError(f"random POVM with K={K} on dimension {dim} is too large")
    V = numlin.random_isometry(K * dim, dim, rng)
    return Povm(_blocks_to_elements(V, K, dim), p)


def projective_povm(basis, p=1):
    """Rank-1 projectors onto the columns of a unitary."""
    U = np.asarray(basis, dtype=complex)
    return Povm(np.einsum("ik,jk->kij", U, U.conj()), p)


def sld_eigenbasis_povm(rho, L):
    """Projective measurement on the eigenvectors of an SLD."""
    _, V = numlin.eig_hermitian(L)
    return projective_povm(V)


def product_povm(povm, p):
    """Repeat a 1-local POVM independently on ``p`` copies."""
    elements = []
    for combo in itertools.product(range(povm.K), repeat=p):
        M = povm.elements[combo[0]]
        for a in combo[1:]:
            M = np.kron(M, povm.elements[a])
        elements.append(M)
    return Povm(np.array(elements), povm.p * p)


def _metric_pieces(model, x, p):
    rho = evaluate(model, x)
    T = tangent(model, x)
    F_Q = qfim(rho, slds(rho, T)).matrix
    return rho, T, F_Q


def gamma_of(model, x, povm):
    """``Tr[(p F_Q)^{-1} F_Cp]`` for a POVM on ``p = povm.p`` copies."""
    rho, T, F_Q = _metric_pieces(model, x, povm.p)
    if povm.dim != model.d ** povm.p:
        raise InvalidInputError(
            f"POVM dimension {povm.dim} does not match d^p = {model.d}^{povm.p}"
        )
    F_C = cfim(rho, T, povm).matrix
    return float(np.trace(metric_inverse(povm.p * F_Q) @ F_C))


class _PovmObjective:
    """Scalar function of the CFIM of ``M(A)`` with its gradient in ``A``.

    ``kind="gamma"`` maximizes ``Tr[Λ F_C]``; ``kind="crb"`` minimizes
    ``Tr[W F_C^{-1}]``. Both are expressed as a minimization.
    """

    def __init__(self, rho_matrix, tangent_ops, K, kind, weight):
        self.rho = rho_matrix
        self.T = tangent_ops
        n, D = len(tangent_ops), rho_matrix.shape[0]
        # Tr(X M) = vec(Xᵀ)·vec(M); stack ρ and the tangents for one GEMM
        self._traces = np.vstack([rho_matrix.T.reshape(1, -1),
                                  np.swapaxes(tangent_ops, 1, 2).reshape(n, -1)]).T
        self._T_flat = tangent_ops.reshape(n, -1)
        self.D = rho_matrix.shape[0]
        self.K = K
        self.kind = kind
        self.weight = weight

    def unpack(self, vec):
        half = vec.size // 2
        return (vec[:half] + 1j * vec[half:]).reshape(self.K * self.D, self.D)

    def pack(self, A):
        A = A.ravel()
        return np.concatenate([A.real, A.imag])

    def isometry(self, A):
        s, U = np.linalg.eigh(A.conj().T @ A)
        return A @ ((U / np.sqrt(s)) @ U.conj().T), s, U

    def cfim(self, M):
        tr = (M.reshape(self.K, -1) @ self._traces).real
        probs, g = tr[:, 0], tr[:, 1:]
        keep = probs >= PROBABILITY_FLOOR
        F = (g[keep] / probs[keep, None]).T @ g[keep]
        return (F + F.T) / 2, probs, g, keep

    def value(self, M):
        F = self.cfim(M)[0]
        if self.kind == "gamma":
            return float(np.sum(self.weight * F))
        try:
            Finv = np.linalg.inv(F)
        except np.linalg.LinAlgError:
            return np.inf
        val = float(np.sum(self.weight * Finv))
        return val if val > 0 else np.inf

    def __call__(self, vec):
        A = self.unpack(vec)
        V, s, U = self.isometry(A)
        M = _blocks_to_elements(V, self.K, self.D)
        F, probs, g, keep = self.cfim(M)
        if self.kind == "gamma":
            val = float(np.sum(self.weight * F))
            B = self.weight
            sign = -1.0
        else:
            try:
                Finv = np.linalg.inv(F)
            except np.linalg.LinAlgError:
                return 1e300, np.zeros_like(vec)
            val = float(np.sum(self.weight * Finv))
            if not np.isfinite(val) or val <= 0 or np.linalg.cond(F) > 1e14:
                return 1e300, np.zeros_like(vec)
            B = -Finv @ self.weight @ Finv
            sign = 1.0
        # dval = Σ_α Tr(H_α dM_α)
        pk = np.where(keep, probs, 1.0)
        Bg = g @ B
        coef = np.where(keep[:, None], 2 * Bg / pk[:, None], 0.0)
        quad = np.where(keep, np.einsum("kj,kj->k", Bg, g) / pk ** 2, 0.0)
        H = (coef @ self._T_flat).reshape(self.K, self.D, self.D) - quad[:, None, None] * self.rho
        Vb = V.reshape(self.K, self.D, self.D)
        G_V = 2 * (Vb @ H).reshape(self.K * self.D, self.D)
        # chain rule through the polar factor V = A f(A†A), f(s) = s^{-1/2}
        f = 1 / np.sqrt(s)
        fP = (U * f) @ U.conj().T
        Y = G_V.conj().T @ A
        Yh = (Y + Y.conj().T) / 2
        ds = s[:, None] - s[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            phi = np.where(np.abs(ds) > 1e-12 * s.max(), (f[:, None] - f[None, :]) / ds, 0.0)
        phi[np.diag_indices_from(phi)] = -0.5 * s ** -1.5
        Q = U @ (phi * (U.conj().T @ Yh @ U)) @ U.conj().T
        G_A = G_V @ fP + 2 * A @ Q
        return sign * val, sign * self.pack(G_A)


@dataclass
class GammaResult:
    """Best POVM found by a search; a lower witness, never a certificate."""

    povm: Povm
    value: float
    restart_values: list
    iterations: list
    seed: int
    objective: str = "gamma"
    label: str = field(default="best found")

    @property
    def gamma(self):
        return self.value


def _search(rho_matrix, tangent_ops, K, kind, weight, restarts, iters, seed, p, initial=()):
    D = rho_matrix.shape[0]
    numlin.check_dim(D, what="measured space")
    if K * D * D > MAX_SEARCH_ENTRIES:
        raise ResourceLimitError(f"POVM search with K={K} on dimension {D} is too large")
    obj = _PovmObjective(rho_matrix, tangent_ops, K, kind, weight)
    rng = np.random.default_rng(seed)
    starts = []
    for povm in initial:
        starts.append(_isometry_from_povm(povm, K))
    for _ in range(restarts):
        starts.append(numlin.random_isometry(K * D, D, rng))
    best = None
    values, iterations = [], []
    for A0 in starts:
        res = minimize(obj, obj.pack(A0), jac=True, method="L-BFGS-B",
                       options={"maxiter": iters, "ftol": 1e-15, "gtol": 1e-11, "maxcor": 10})
        V = obj.isometry(obj.unpack(res.x))[0]
        M = _blocks_to_elements(V, K, D)
        val = obj.value(M)
        if not np.isfinite(val):
            values.append(float("nan"))
            iterations.append(int(res.nit))
            continue
        values.append(val)
        iterations.append(int(res.nit))
        better = best is None or (val > best[0] if kind == "gamma" else val < best[0])
        if better:
            M = (M + np.conj(np.swapaxes(M, 1, 2))) / 2
            # remove roundoff drift from completeness
            M -= (M.sum(axis=0) - np.eye(D))[None] / K
            best = (val, M)
    if best is None:
        raise SearchError("every restart of the POVM search produced a non-finite objective")
    return best, values, iterations


def _isometry_from_povm(povm, K):
    if povm.K > K:
        raise InvalidInputError(f"warm-start POVM has {povm.K} outcomes, search allows {K}")
    D = povm.dim
    blocks = []
    for M in povm.elements:
        w, U = np.linalg.eigh(M)
        blocks.append((U * np.sqrt(np.clip(w, 0, None))).conj().T)
    blocks.extend([np.zeros((D, D))] * (K - povm.K))
    A = np.vstack(blocks)
    # keep every block slightly alive so the polar factor stays defined
    return A + 1e-6 * np.ones_like(A)


def optimize_gamma(model, x, p=1, K=None, restarts=4, iters=200, seed=0, initial=()):
    """Search p-local POVMs for the largest ``Tr[(pF_Q)^{-1} F_Cp]``."""
    rho, T, F_Q = _metric_pieces(model, x, p)
    rho_p, T_p = tensor_state(rho, T, p)
    D = rho_p.dim
    K = D * D if K is None else int(K)
    weight = metric_inverse(p * F_Q)
    (val, M), values, its = _search(rho_p.matrix, T_p, K, "gamma", weight, restarts, iters,
                                    seed, p, initial)
    return GammaResult(Povm(M, p), float(val), values, its, seed, "gamma")


def optimize_weighted_crb(model, x, W=None, p=1, K=None, restarts=4, iters=200, seed=0,
                          initial=()):
    """Search p-local POVMs for the smallest ``p·Tr[W F_Cp^{-1}]``.

    The value is the per-copy weighted Cramér-Rao bound ``ν Tr[W Cov]``
    reachable by repeating the returned measurement.
    """
    rho, T, F_Q = _metric_pieces(model, x, p)
    rho_p, T_p = tensor_state(rho, T, p)
    D = rho_p.dim
    K = D * D if K is None else int(K)
    W = np.eye(model.n) if W is None else np.asarray(W, dtype=float)
    (val, M), values, its = _search(rho_p.matrix, T_p, K, "crb", W, restarts, iters, seed, p,
                                    initial)
    return GammaResult(Povm(M, p), float(p * val), [p * v for v in values], its, seed, "crb")
