"""Covariance lower bounds minimized over locally unbiased observables.

Every bound here has the form ``min_X objective(X)`` over tuples of Hermitian
``X_j`` with ``Tr(ρX_j) = 0`` and ``Tr(∂_kρ X_j) = δ_jk``. The constraints are
eliminated up front (:class:`UnbiasedSpace`), so every iterate is feasible
and every reported value is a genuine upper estimate of the infimum.

The trace-norm terms are smoothed (``σ → √(σ² + μ²) - μ``) and ``μ`` is
decreased stage by stage; each stage is an L-BFGS run with exact gradients.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from . import numlin
from .errors import (
    ConvergenceError,
    InfeasibleError,
    InvalidInputError,
    PreconditionError,
    SingularMetricError,
    UnsupportedArityError,
)
from .bounds_analytic import check_frame
from .fisher import metric_inverse, outcome_probabilities, qfim, slds

FEASIBILITY_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class UnbiasedSpace:
    """Affine space of locally unbiased tuples ``X = particular + Σ t_i basis_i``.

    Tuples are ``(n, d, d)`` arrays. Coordinates live in the Hilbert-Schmidt
    orthonormal Gell-Mann basis, so the homogeneous directions are
    orthonormal too.
    """

    rho: object
    tangent: np.ndarray
    particular: np.ndarray
    operator_basis: np.ndarray
    null_coeffs: np.ndarray

    @property
    def n(self):
        return len(self.particular)

    @property
    def dim(self):
        return self.n * self.null_coeffs.shape[1]

    def coefficients(self, t):
        C0 = np.einsum("jab,kba->jk", self.particular, self.operator_basis).real
        k = self.null_coeffs.shape[1]
        return C0 + np.asarray(t).reshape(self.n, k) @ self.null_coeffs.T

    def tuple_at(self, t):
        if self.dim == 0:
            return self.particular.copy()
        return np.einsum("ja,abc->jbc", self.coefficients(t), self.operator_basis)

    def basis_tuples(self):
        k = self.null_coeffs.shape[1]
        out = np.zeros((self.dim, self.n) + self.particular.shape[1:], dtype=complex)
        for j in range(self.n):
            for i in range(k):
                out[j * k + i, j] = np.tensordot(self.null_coeffs[:, i], self.operator_basis, 1)
        return out

    def grad_to_coords(self, G):
        """Pull a Hermitian gradient tuple back to the affine coordinates."""
        gC = np.einsum("jbc,acb->ja", G, self.operator_basis).real
        return (gC @ self.null_coeffs).ravel()

    def residuals(self, X):
        return unbiased_residuals(self.rho, self.tangent, X)


def unbiased_residuals(rho, tangent, X):
    """Largest violation of ``Tr(ρX_j) = 0`` and ``Tr(∂_kρ X_j) = δ_jk``."""
    X = np.asarray(X)
    mean = np.einsum("ab,jba->j", rho.matrix, X)
    cross = np.einsum("kab,jba->jk", tangent, X)
    return float(max(np.max(np.abs(mean)), np.max(np.abs(cross - np.eye(len(X))))))


def unbiased_space(rho, tangent):
    tangent = np.asarray(tangent)
    L = slds(rho, tangent)
    try:
        Finv = metric_inverse(qfim(rho, L).matrix)
    except SingularMetricError as exc:
        raise InfeasibleError(f"no locally unbiased tuple exists: {exc}") from exc
    X0 = np.einsum("jk,kab->jab", Finv, L.ops)
    X0 = (X0 + np.conj(np.swapaxes(X0, 1, 2))) / 2
    residual = unbiased_residuals(rho, tangent, X0)
    if residual > FEASIBILITY_TOL:
        raise InfeasibleError(f"particular solution violates the constraints by {residual:.3e}")
    B = numlin.gell_mann_basis(rho.dim)
    rows = np.vstack([rho.matrix[None], tangent])
    G = np.einsum("rab,kba->rk", rows, B).real
    _, s, Vt = np.linalg.svd(G)
    rank = int(np.sum(s > 1e-10 * s[0]))
    return UnbiasedSpace(rho, tangent, X0, B, Vt[rank:].T)


def _smoothed_trace_norm(M, mu):
    """``Σ √(σ² + μ²) - μ`` over singular values and its gradient in ``M``."""
    P = M.conj().T @ M
    s2, U = np.linalg.eigh((P + P.conj().T) / 2)
    s2 = np.clip(s2, 0.0, None)
    root = np.sqrt(s2 + mu * mu)
    value = float(np.sum(root) - mu * len(root))
    grad = M @ ((U / root) @ U.conj().T)
    return value, grad


@dataclass
class SolverConfig:
    max_iters: int = 500
    mu_schedule: tuple = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8)
    restarts: int = 0
    seed: int = 0
    tolerance: float = 1e-7

    @classmethod
    def from_json(cls, data):
        data = dict(data or {})
        unknown = set(data) - {"max_iters", "mu_schedule", "restarts", "seed", "tolerance"}
        if unknown:
            raise InvalidInputError(f"unknown solver config fields: {sorted(unknown)}")
        if "mu_schedule" in data:
            data["mu_schedule"] = tuple(float(m) for m in data["mu_schedule"])
        return cls(**data)


@dataclass
class ConvexResult:
    """Minimized bound with solver diagnostics.

    ``value`` is the unsmoothed objective at the best feasible iterate, so
    it never lies below the true infimum.
    """

    value: float
    X: np.ndarray
    iterations: int
    final_mu: float
    stages: int
    converged: bool
    smoothing_gap: float
    restart_values: list = field(default_factory=list)

    def __float__(self):
        return float(self.value)


class _Objective:
    """Objective over affine coordinates: exact value and smoothed value/gradient."""

    scale = 1.0

    def __init__(self, space):
        self.space = space

    def exact(self, t):
        return self.evaluate(self.space.tuple_at(t), None)[0]

    def smoothed(self, t, mu):
        value, G = self.evaluate(self.space.tuple_at(t), mu)
        return value, self.space.grad_to_coords(G)


class _ZObjective(_Objective):
    """``Tr[W Re Tr(ρX_jX_k)] + ‖√W Im Tr(S X_j X_k) √W‖₁``.

    ``S = ρ`` gives the Holevo objective; a frame-weighted ``S`` gives the
    general framework bound.
    """

    def __init__(self, space, W, S):
        super().__init__(space)
        self.rho = space.rho.matrix
        W = np.asarray(W, dtype=float)
        # optimize with tr W = 1 so the smoothing and stopping rules do not
        # depend on the weight's scale; values are rescaled on report
        tr = float(np.trace(W))
        self.scale = tr if tr > 0 else 1.0
        self.W = W / self.scale
        self.sqrtW = numlin.psd_sqrt(self.W).real
        self.S = S

    def evaluate(self, X, mu):
        RX = self.rho @ X
        ReZ = np.einsum("jab,kba->jk", RX, X).real
        SX = self.S @ X
        ImZ = np.einsum("jab,kba->jk", SX, X).imag
        ImZ = (ImZ - ImZ.T) / 2
        M = self.sqrtW @ ImZ @ self.sqrtW
        quad = float(np.sum(self.W * ReZ))
        if mu is None:
            return quad + numlin.trace_norm(M), None
        tn, GM = _smoothed_trace_norm(M, mu)
        Gam = (self.sqrtW @ GM.real @ self.sqrtW)
        A = Gam - Gam.T
        XR = X @ self.rho
        anti = XR + np.conj(np.swapaxes(XR, 1, 2))
        XS = X @ self.S
        comm = XS - np.conj(np.swapaxes(XS, 1, 2))  # [X_k, S]
        G = np.einsum("jk,kab->jab", self.W, anti) + np.einsum("jk,kab->jab", A, comm) / 2j
        return quad + tn, G


class _NagaokaObjective(_Objective):
    """``Tr(ρX₁²) + Tr(ρX₂²) + ‖√ρ[X₁, X₂]√ρ‖₁``."""

    def __init__(self, space):
        super().__init__(space)
        self.rho = space.rho.matrix
        self.sq = space.rho.sqrt

    def evaluate(self, X, mu):
        X1, X2 = X
        quad = float(np.trace(self.rho @ (X1 @ X1 + X2 @ X2)).real)
        M = self.sq @ (X1 @ X2 - X2 @ X1) @ self.sq
        if mu is None:
            return quad + numlin.trace_norm(M), None
        tn, GM = _smoothed_trace_norm(M, mu)
        K = self.sq @ GM.conj().T @ self.sq
        g1 = X2 @ K - K @ X2
        g2 = K @ X1 - X1 @ K
        G = np.array([X1 @ self.rho + self.rho @ X1 + (g1 + g1.conj().T) / 2,
                      X2 @ self.rho + self.rho @ X2 + (g2 + g2.conj().T) / 2])
        return quad + tn, G


def _run(objective, config, t0):
    space = objective.space
    t = np.array(t0, dtype=float)
    best_t, best_val = t.copy(), objective.exact(t)
    prev = best_val
    iterations = 0
    converged = space.dim == 0
    mu = config.mu_schedule[0] if config.mu_schedule else 0.0
    stages = 0
    last_success = True
    for mu in ([] if converged else config.mu_schedule):
        stages += 1
        res = minimize(objective.smoothed, t, args=(mu,), jac=True, method="L-BFGS-B",
                       options={"maxiter": config.max_iters, "ftol": 1e-16, "gtol": 1e-12})
        iterations += int(res.nit)
        last_success = res.nit < config.max_iters
        t = res.x
        val = objective.exact(t)
        if val < best_val:
            best_t, best_val = t.copy(), val
        if stages > 1 and abs(prev - val) < config.tolerance:
            converged = True
            break
        prev = val
    converged = converged or last_success
    smoothed = objective.smoothed(best_t, mu)[0] if space.dim else best_val
    return best_t, best_val, iterations, mu, stages, converged, best_val - smoothed


def _solve(objective, config):
    config = config or SolverConfig()
    space = objective.space
    rng = np.random.default_rng(config.seed)
    starts = [np.zeros(space.dim)]
    for _ in range(config.restarts):
        starts.append(rng.normal(size=space.dim))
    runs = [_run(objective, config, t0) for t0 in starts]
    best = min(runs, key=lambda r: r[1])
    t, val, its, mu, stages, converged, gap = best
    c = objective.scale
    result = ConvexResult(c * val, space.tuple_at(t), sum(r[2] for r in runs), mu, stages,
                          converged, c * gap, [c * r[1] for r in runs])
    val = c * val
    if not converged:
        raise ConvergenceError(
            f"minimization did not converge within {config.max_iters} iterations per stage",
            best_value=val, diagnostics={"result": result},
        )
    return result


def _check_weight(W, n):
    W = np.asarray(W, dtype=float)
    if W.shape != (n, n):
        raise InvalidInputError(f"weight matrix must be {n}x{n}, got {W.shape}")
    if not np.allclose(W, W.T, atol=1e-12) or numlin.min_eig(W) < -1e-10:
        raise InvalidInputError("weight matrix must be symmetric PSD")
    return (W + W.T) / 2


def holevo_bound(rho, tangent, W=None, config=None):
    """``min_X Tr[W Re Z(X)] + ‖√W Im Z(X) √W‖₁`` with ``Z_jk = Tr(ρX_jX_k)``."""
    space = unbiased_space(rho, tangent)
    W = np.eye(space.n) if W is None else _check_weight(W, space.n)
    return _solve(_ZObjective(space, W, rho.matrix), config)


def nagaoka_bound(rho, tangent, config=None):
    """Two-parameter 1-local bound with the ``‖√ρ[X₁, X₂]√ρ‖₁`` penalty."""
    if len(tangent) != 2:
        raise UnsupportedArityError(f"the Nagaoka bound needs n = 2 parameters, got {len(tangent)}")
    return _solve(_NagaokaObjective(unbiased_space(rho, tangent)), config)


def frame_operator(rho, u_set, transpose_mask=None):
    """``Σ_q s_q √ρ|u_q⟩⟨u_q|√ρ`` with ``s_q = -1`` where the mask transposes."""
    U = check_frame(u_set, rho.dim)
    if transpose_mask is None:
        signs = np.ones(len(U))
    else:
        mask = np.asarray(transpose_mask, dtype=bool)
        if mask.shape != (len(U),):
            raise InvalidInputError(f"transpose mask has length {mask.size}, frame has {len(U)}")
        signs = np.where(mask, -1.0, 1.0)
    V = U @ rho.sqrt.T
    return np.einsum("q,qa,qb->ab", signs, V, V.conj())


def general_framework_bound(rho, tangent, W=None, u_set=None, transpose_mask=None, config=None):
    """``min_X Tr[W Ā_Re] + ‖√W Ā_Im √W‖₁`` for a frame ``{u_q}`` and mask.

    ``Ā = Σ_q Ā_{u_q}`` with ``(A_u)_jk = ⟨u|√ρ X_j X_k √ρ|u⟩`` or its
    transpose. The real part does not depend on the mask and equals
    ``Re Tr(ρ X_j X_k)``.
    """
    space = unbiased_space(rho, tangent)
    W = np.eye(space.n) if W is None else _check_weight(W, space.n)
    u_set = np.eye(rho.dim) if u_set is None else u_set
    S = frame_operator(rho, u_set, transpose_mask)
    return _solve(_ZObjective(space, W, S), config)


def objective_value(kind, rho, X, W=None, u_set=None, transpose_mask=None):
    """Unsmoothed objective of a bound at an arbitrary tuple ``X``."""
    n = len(X)
    W = np.eye(n) if W is None else np.asarray(W, dtype=float)
    rho_m = rho.matrix
    Z = np.einsum("ab,jbc,kca->jk", rho_m, X, X)
    if kind == "holevo":
        S = rho_m
    elif kind == "framework":
        S = frame_operator(rho, np.eye(rho.dim) if u_set is None else u_set, transpose_mask)
    elif kind == "nagaoka":
        M = rho.sqrt @ (X[0] @ X[1] - X[1] @ X[0]) @ rho.sqrt
        return float(Z[0, 0].real + Z[1, 1].real + numlin.trace_norm(M))
    else:
        raise InvalidInputError(f"unknown objective {kind!r}")
    ImS = np.einsum("ab,jbc,kca->jk", S, X, X).imag
    sW = numlin.psd_sqrt(W).real
    return float(np.sum(W * Z.real) + numlin.trace_norm(sW @ ImS @ sW))


# --- Cov_u / A_u dominance ------------------------------------------------

def locally_unbiased_estimator(rho, tangent, povm, x):
    """Estimator values ``x̂(α) = x + F_C^{-1} ∂ log p(α|x)``, shape ``(K, n)``.

    It is locally unbiased at ``x`` and its covariance is ``F_C^{-1}``.
    """
    E = np.asarray(povm.elements)
    probs = outcome_probabilities(rho.matrix, E)
    g = np.einsum("jab,kba->kj", np.asarray(tangent), E).real
    keep = probs > 1e-12
    F = (g[keep] / probs[keep, None]).T @ g[keep]
    w = np.linalg.eigvalsh(F)
    if w[0] <= 1e-12 * max(w[-1], 1e-300):
        raise PreconditionError("classical Fisher matrix of the POVM is singular; "
                                "no locally unbiased estimator exists",
                                residuals=float(w[0]))
    Finv = np.linalg.inv(F)
    score = np.where(keep[:, None], g / np.where(keep, probs, 1.0)[:, None], 0.0)
    return np.asarray(x, dtype=float)[None, :] + score @ Finv.T


def estimator_observables(povm, estimates, x):
    """``X_j = Σ_α [x̂_j(α) - x_j] M_α``."""
    dev = np.asarray(estimates) - np.asarray(x, dtype=float)[None, :]
    return np.einsum("kj,kab->jab", dev, np.asarray(povm.elements))


def cov_u(rho, povm, estimates, x, u):
    """``Σ_α (x̂(α) - x)(x̂(α) - x)ᵀ ⟨u|√ρ M_α √ρ|u⟩``."""
    v = rho.sqrt @ np.asarray(u, dtype=complex)
    weights = np.einsum("a,kab,b->k", v.conj(), np.asarray(povm.elements), v).real
    dev = np.asarray(estimates) - np.asarray(x, dtype=float)[None, :]
    return (dev * weights[:, None]).T @ dev


def a_u(rho, X, u):
    """``(A_u)_jk = ⟨u|√ρ X_j X_k √ρ|u⟩`` (Hermitian ``n×n``)."""
    v = rho.sqrt @ np.asarray(u, dtype=complex)
    w = np.einsum("jab,b->ja", X, v)
    return w.conj() @ w.T


def verify_dominance(rho, tangent, povm, estimates, x, u, tol=1e-8):
    """Minimum eigenvalues of ``Cov_u - A_u`` and ``Cov_u - A_uᵀ``.

    Raises :class:`PreconditionError` if the estimator's observables are not
    locally unbiased at ``x``.
    """
    X = estimator_observables(povm, estimates, x)
    residual = unbiased_residuals(rho, tangent, X)
    if residual > tol:
        raise PreconditionError(
            f"estimator is not locally unbiased (constraint residual {residual:.3e})",
            residuals=residual,
        )
    C = cov_u(rho, povm, estimates, x, u)
    A = a_u(rho, X, u)
    return numlin.min_eig(C - A), numlin.min_eig(C - A.T)


def estimator_covariance(rho, povm, estimates, x):
    """Exact single-shot covariance ``Σ_α p(α)(x̂(α) - x)(x̂(α) - x)ᵀ``."""
    probs = outcome_probabilities(rho.matrix, np.asarray(povm.elements))
    dev = np.asarray(estimates) - np.asarray(x, dtype=float)[None, :]
    return (dev * probs[:, None]).T @ dev
