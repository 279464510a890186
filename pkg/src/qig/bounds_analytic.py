"""Closed-form upper bounds on Γ_p and their covariance-side conversion.

Γ_p is the largest ``Tr[(pF_Q)^{-1} F_Cp]`` reachable by measurements acting
on at most ``p`` copies. Everything here is an upper bound on Γ_p (or, for
:func:`weighted_cov_lower_bound`, a lower bound on ``ν Tr[W Cov]``).
"""
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln

from . import numlin
from .errors import InvalidFrameError, InvalidInputError, QigError, ResourceLimitError
from .fisher import f_im, metric_inv_sqrt, qfim, reparametrized_slds, slds, tensor_slds
from .models import evaluate, tangent

FRAME_TOL = 1e-8
EXACT_TP_LIMIT = 1_000_000
PRECEDENCE = ("cp", "tp", "fbar", "pure", "gill_massar", "zhu_hayashi", "trivial")


def f_n(n):
    """Largest admissible prefactor ``max{1/(4(n-1)), (n-2)/(n-1)², 1/5}``."""
    if int(n) != n or n < 2:
        raise InvalidInputError(f"f(n) needs an integer n >= 2, got {n}")
    return max(1 / (4 * (n - 1)), (n - 2) / (n - 1) ** 2, 1 / 5)


def _gap_bound(n, coeff, M):
    return float(min(n, max(0.0, n - coeff * np.sum(np.asarray(M) ** 2))))


def pure_state_gamma_bound(F_Q, F_Im, n=None):
    """``n - f(n) ‖F_Q^{-1/2} F_Im F_Q^{-1/2}‖_F²`` for pure states."""
    F_Q = np.asarray(F_Q, dtype=float)
    n = F_Q.shape[0] if n is None else n
    S = metric_inv_sqrt(F_Q)
    return _gap_bound(n, f_n(n), S @ np.asarray(F_Im) @ S)


@dataclass(frozen=True, eq=False)
class CpMatrix:
    """Commutator trace-norm matrix (``C_p`` or ``T_p``) for ``p`` copies."""

    matrix: np.ndarray
    p: int
    kind: str = "cp"
    stderr: np.ndarray = None

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)


def _pair_commutators(ops):
    n = len(ops)
    out = {}
    for j in range(n):
        for k in range(j + 1, n):
            out[j, k] = ops[j] @ ops[k] - ops[k] @ ops[j]
    return out


def cp_matrix(rho, slds_tilde, p):
    """``(C_p)_jk = ½‖√ρ^{⊗p} [L̃_jp, L̃_kp] √ρ^{⊗p}‖₁``.

    Cross terms of the tensor-sum SLDs act on different copies and commute,
    so ``[L̃_jp, L̃_kp]`` is the tensor sum of the single-copy commutator.
    """
    n = len(slds_tilde.ops)
    S = numlin.kron_power(rho.sqrt, p)
    C = np.zeros((n, n))
    for (j, k), comm in _pair_commutators(slds_tilde.ops).items():
        big = numlin.tensor_sum(comm, p)
        C[j, k] = C[k, j] = 0.5 * numlin.trace_norm(S @ big @ S)
    return CpMatrix(C, p, "cp")


def cp_gamma_bound(C_p, p, n):
    if n < 2:
        raise InvalidInputError("Γ bounds need n >= 2")
    return _gap_bound(n, 1 / (4 * (n - 1)), np.asarray(C_p) / p)


def cp_limit_matrix(rho, slds_tilde):
    """Large-p limit of ``C_p/p``: ``½|Tr(ρ[L̃_j, L̃_k])|``."""
    n = len(slds_tilde.ops)
    out = np.zeros((n, n))
    for (j, k), comm in _pair_commutators(slds_tilde.ops).items():
        out[j, k] = out[k, j] = 0.5 * abs(np.trace(rho.matrix @ comm))
    return out


def _diag_imag_commutators(rho, slds_tilde):
    """``Im⟨Ψ_i|[L̃_j, L̃_k]|Ψ_i⟩`` on the support, keyed by pair."""
    V = rho.eigenvectors[:, rho.support]
    return {jk: np.einsum("ai,ab,bi->i", V.conj(), comm, V).imag
            for jk, comm in _pair_commutators(slds_tilde.ops).items()}


def _compositions(p, m):
    """All count vectors of length ``m`` summing to ``p``."""
    out = []
    for bars in itertools.combinations(range(p + m - 1), m - 1):
        prev = -1
        counts = []
        for b in bars:
            counts.append(b - prev - 1)
            prev = b
        counts.append(p + m - 1 - prev - 1)
        out.append(counts)
    return np.array(out, dtype=float).reshape(-1, m)


def tp_matrix(rho, slds_tilde, p, mode="exact", samples=100_000, seed=0):
    """``(T_p)_jk = ½ E|Σ_r ⟨Φ_r|[L̃_j, L̃_k]|Φ_r⟩|`` over eigenvector strings.

    Each ``Φ_r`` is an eigenvector ``Ψ_i`` drawn with probability ``λ_i``. The
    summand only depends on how often each eigenvector occurs, so exact mode
    sums over count vectors with multinomial weights. Monte-Carlo mode also
    fills ``stderr``.
    """
    lam = rho.eigenvalues[rho.support]
    lam = lam / lam.sum()
    m = len(lam)
    n = len(slds_tilde.ops)
    a = _diag_imag_commutators(rho, slds_tilde)
    T = np.zeros((n, n))
    err = np.zeros((n, n))
    if mode == "exact":
        count = math.comb(p + m - 1, m - 1)
        if count > EXACT_TP_LIMIT:
            raise ResourceLimitError(
                f"exact T_p needs {count} count vectors (limit {EXACT_TP_LIMIT}); "
                "use mode='monte-carlo'"
            )
        counts = _compositions(p, m)
        with np.errstate(divide="ignore"):
            logw = gammaln(p + 1) - gammaln(counts + 1).sum(axis=1) + counts @ np.log(lam)
        weights = np.exp(logw)
        for (j, k), ak in a.items():
            T[j, k] = T[k, j] = 0.5 * float(weights @ np.abs(counts @ ak))
        return CpMatrix(T, p, "tp")
    if mode != "monte-carlo":
        raise InvalidInputError(f"unknown T_p mode {mode!r}")
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(p, lam, size=int(samples)).astype(float)
    for (j, k), ak in a.items():
        draws = 0.5 * np.abs(counts @ ak)
        T[j, k] = T[k, j] = draws.mean()
        err[j, k] = err[k, j] = draws.std(ddof=1) / np.sqrt(len(draws))
    return CpMatrix(T, p, "tp", err)


def tp_gamma_bound(T_p, p, n):
    if n < 2:
        raise InvalidInputError("Γ bounds need n >= 2")
    return _gap_bound(n, 1 / (4 * (n - 1)), np.asarray(T_p) / p)


def check_frame(u_set, dim=None):
    U = np.atleast_2d(np.asarray(u_set, dtype=complex))
    if dim is not None and U.shape[1] != dim:
        raise InvalidFrameError(f"frame vectors have length {U.shape[1]}, expected {dim}")
    defect = float(np.max(np.abs(U.T @ U.conj() - np.eye(U.shape[1]))))
    if defect > FRAME_TOL:
        raise InvalidFrameError(f"frame does not resolve the identity (max deviation {defect:.3e})")
    return U


def _frame_imag_parts(rho, sld_set, p, u_set):
    """``Im F_{u_q}`` stacked as ``(Q, n, n)``, with ``F_u = ⟨u|√ρ L_j L_k √ρ|u⟩``."""
    Lp = tensor_slds(sld_set, p).ops
    S = numlin.kron_power(rho.sqrt, p)
    U = check_frame(u_set, S.shape[0])
    vecs = U @ S.T  # rows are (√ρ u_q)ᵀ
    w = np.einsum("jab,qb->qja", Lp, vecs)
    F = np.einsum("qja,qka->qjk", w.conj(), w)
    return F.imag


def fbar_imp_gamma_bound(rho, sld_set, p, u_set, transpose_mask=None, F_Q=None):
    """``n - f(n)‖F_Q^{-1/2} F̄_Imp F_Q^{-1/2} / p‖_F²`` for one frame and mask.

    ``transpose_mask[q]`` true means ``F_{u_q}ᵀ`` is used, which flips the
    sign of its imaginary part.
    """
    n = len(sld_set.ops)
    if F_Q is None:
        F_Q = qfim(rho, sld_set).matrix
    im = _frame_imag_parts(rho, sld_set, p, u_set)
    signs = _mask_signs(transpose_mask, len(im))
    S = metric_inv_sqrt(F_Q)
    return _gap_bound(n, f_n(n), S @ np.tensordot(signs, im, axes=1) @ S / p)


def _mask_signs(mask, count):
    if mask is None:
        return np.ones(count)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (count,):
        raise InvalidFrameError(f"transpose mask has length {mask.size}, frame has {count} vectors")
    return np.where(mask, -1.0, 1.0)


def best_fbar_bound(rho, sld_set, p, u_set, F_Q=None, exhaustive_limit=12,
                    samples=512, seed=0):
    """Tightest F̄ bound over transpose masks for one frame.

    Masks are enumerated when the frame has at most ``exhaustive_limit``
    vectors and sampled otherwise. Returns ``(value, mask)``.
    """
    n = len(sld_set.ops)
    if F_Q is None:
        F_Q = qfim(rho, sld_set).matrix
    S = metric_inv_sqrt(F_Q)
    im = np.einsum("ab,qbc,cd->qad", S, _frame_imag_parts(rho, sld_set, p, u_set), S) / p
    Q = len(im)
    if Q <= exhaustive_limit:
        masks = np.array(list(itertools.product([False, True], repeat=Q)))
    else:
        rng = np.random.default_rng(seed)
        masks = np.vstack([np.zeros(Q, bool), rng.random((samples, Q)) < 0.5])
    signs = np.where(masks, -1.0, 1.0)
    norms = np.sum(np.tensordot(signs, im, axes=1) ** 2, axis=(1, 2))
    best = int(np.argmax(norms))
    return float(min(n, max(0.0, n - f_n(n) * norms[best]))), masks[best]


def eigen_frame(rho, p=1):
    """Eigenvectors of ``ρ^{⊗p}`` as frame rows."""
    return numlin.kron_power(rho.eigenvectors, p).T


def random_frame(dim, count, rng):
    """``count`` vectors resolving the identity on ``dim`` dimensions."""
    V = numlin.random_isometry(count, dim, rng)
    return V.conj()


def gill_massar_bound(d):
    if d < 2:
        raise InvalidInputError("dimension must be >= 2")
    return float(d - 1)


def zhu_hayashi_bound(d):
    if d < 2:
        raise InvalidInputError("dimension must be >= 2")
    return 1.5 * (d - 1)


def weighted_cov_lower_bound(W, F_Q, D):
    """``(Tr√(F_Q^{-1/2} W F_Q^{-1/2}))² / D``, a lower bound on ``ν Tr[W Cov]``."""
    if not D > 0:
        raise InvalidInputError(f"Γ bound D must be positive, got {D}")
    W = np.asarray(W, dtype=float)
    if numlin.min_eig(W) < -1e-10:
        raise InvalidInputError("weight matrix must be PSD")
    try:
        S = metric_inv_sqrt(F_Q)
    except QigError as exc:
        raise InvalidInputError(str(exc)) from exc
    root = numlin.psd_sqrt(S @ W @ S)
    return float(np.trace(root).real ** 2 / D)


# --- reports ----------------------------------------------------------------

@dataclass
class BoundEntry:
    name: str
    value: float = None
    status: str = "ok"
    kind: str = "gamma"
    meta: dict = field(default_factory=dict)

    def to_json(self):
        return {"name": self.name, "value": self.value, "status": self.status,
                "kind": self.kind, "meta": self.meta}


@dataclass
class BoundReport:
    model: str
    x: list
    p: int
    n: int
    d: int
    entries: list = field(default_factory=list)
    weight: list = None
    nu: int = None

    def add(self, *args, **kwargs):
        self.entries.append(BoundEntry(*args, **kwargs))

    def gamma_entries(self):
        return [e for e in self.entries
                if e.kind == "gamma" and e.status in ("ok", "non-binding") and e.value is not None]

    def get(self, name):
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def to_json(self):
        name, value = best_gamma_bound(self)
        out = {"model": self.model, "x": list(self.x), "p": self.p,
               "bounds": [e.to_json() for e in self.entries],
               "best": {"name": name, "value": value}}
        if self.weight is not None:
            out["weight"] = self.weight
        if self.nu is not None:
            out["nu"] = self.nu
        return out


def best_gamma_bound(report):
    """Smallest applicable Γ_p bound; the trivial cap ``n`` is always a candidate."""
    candidates = [(e.value, e.name) for e in report.gamma_entries()]
    if not any(name == "trivial" for _, name in candidates):
        candidates.append((float(report.n), "trivial"))
    rank = {name: i for i, name in enumerate(PRECEDENCE)}
    lowest = min(v for v, _ in candidates)
    tied = [(rank.get(name, len(PRECEDENCE)), name, v) for v, name in candidates
            if v <= lowest + 1e-12]
    _, name, value = min(tied)
    return name, value


def compute_bounds(model, x, p, W=None, frames=None, mask_samples=512, tp_samples=100_000,
                   seed=0):
    """Every analytic Γ_p bound for ``model`` at ``x``, plus the covariance conversion.

    Inapplicable bounds are kept in the report with a ``skipped`` status and
    a reason; Gill-Massar and Zhu-Hayashi are ``non-binding`` when they
    cannot beat the trivial cap.
    """
    x = np.asarray(x, dtype=float)
    rho = evaluate(model, x)
    T = tangent(model, x)
    L = slds(rho, T)
    F_Q = qfim(rho, L).matrix
    n, d = model.n, model.d
    report = BoundReport(model.name, x.tolist(), p, n, d,
                         weight=None if W is None else np.asarray(W, float).tolist())
    report.add("trivial", float(n))

    def skip(name, reason):
        report.add(name, None, "skipped", meta={"reason": reason})

    L_tilde = None
    if n < 2:
        reason = "needs n >= 2"
        for name in ("pure", "fbar", "cp", "tp"):
            skip(name, reason)
    else:
        try:
            L_tilde = reparametrized_slds(L, F_Q)
        except QigError as exc:
            for name in ("pure", "fbar", "cp", "tp"):
                skip(name, str(exc))
    if L_tilde is not None:
        if rho.is_pure:
            report.add("pure", pure_state_gamma_bound(F_Q, f_im(rho, L), n),
                       meta={"f_n": f_n(n)})
        else:
            skip("pure", "state is mixed")
        frame_list = frames if frames is not None else default_frames(rho, p)
        best = None
        for label, U in frame_list:
            value, mask = best_fbar_bound(rho, L, p, U, F_Q, samples=mask_samples, seed=seed)
            if best is None or value < best[0]:
                best = (value, label, mask)
        report.add("fbar", best[0], meta={"frame": best[1], "mask": best[2].astype(int).tolist(),
                                          "frames_tried": len(frame_list)})
        C = cp_matrix(rho, L_tilde, p)
        report.add("cp", cp_gamma_bound(C, p, n), meta={"C_p": C.matrix.tolist()})
        m = rho.rank
        if math.comb(p + m - 1, m - 1) <= EXACT_TP_LIMIT:
            Tp = tp_matrix(rho, L_tilde, p)
            meta = {"T_p": Tp.matrix.tolist(), "mode": "exact"}
        else:
            Tp = tp_matrix(rho, L_tilde, p, "monte-carlo", tp_samples, seed)
            meta = {"T_p": Tp.matrix.tolist(), "mode": "monte-carlo",
                    "stderr": Tp.stderr.tolist()}
        report.add("tp", tp_gamma_bound(Tp, p, n), meta=meta)
    if p == 1:
        gm = gill_massar_bound(d)
        report.add("gill_massar", gm, "ok" if n >= d else "non-binding")
    else:
        skip("gill_massar", "applies to 1-local measurements only")
    if p == 2:
        zh = zhu_hayashi_bound(d)
        report.add("zhu_hayashi", zh, "ok" if n >= zh else "non-binding")
    else:
        skip("zhu_hayashi", "applies to 2-local measurements only")
    name, D = best_gamma_bound(report)
    Wm = np.eye(n) if W is None else np.asarray(W, dtype=float)
    try:
        lower = weighted_cov_lower_bound(Wm, F_Q, D)
        report.add("cov_lower", lower, kind="covariance", meta={"from": name, "D": D})
    except QigError as exc:
        report.add("cov_lower", None, "skipped", kind="covariance", meta={"reason": str(exc)})
    return report


def default_frames(rho, p):
    """Eigenbasis of ``ρ^{⊗p}`` and the computational basis."""
    D = rho.dim ** p
    return [("eigenbasis", eigen_frame(rho, p)), ("computational", np.eye(D, dtype=complex))]
