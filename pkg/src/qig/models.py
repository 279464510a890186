"""Parametrized density-matrix families and their tangents.

A :class:`StateModel` maps a parameter vector to a :class:`DensityMatrix`
and, when it can, to analytic derivatives ``∂ρ/∂x_j``. Models without
analytic derivatives fall back to central finite differences.

Built-in kinds are collected in :data:`KINDS`; :func:`registry` lists the
default instances and :func:`model_from_spec` builds one from the JSON
model-spec accepted by the command line.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import numlin
from .errors import DomainError, InvalidInputError, ModelNotFoundError

SUPPORT_RTOL = 1e-10
TRACE_TOL = 1e-10
FD_REL_STEP = 1e-5

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = np.array([SIGMA_X, SIGMA_Y, SIGMA_Z])


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Unit-trace PSD operator with its eigensystem.

    Eigenvalues are ascending; ``support`` holds the indices of eigenvalues
    above ``1e-10 * λ_max`` and ``rank`` their count.
    """

    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    support: np.ndarray = field(repr=False)
    sqrt: np.ndarray = field(repr=False)

    @classmethod
    def from_matrix(cls, rho):
        rho = numlin.as_hermitian(rho)
        tr = np.trace(rho).real
        if abs(tr - 1.0) > TRACE_TOL:
            raise InvalidInputError(f"density matrix trace is {tr!r}, expected 1")
        w, V = np.linalg.eigh(rho)
        return cls._from_eig(rho, w, V)

    @classmethod
    def _from_eig(cls, rho, w, V):
        if w[0] < numlin.PSD_CLAMP:
            raise InvalidInputError(f"density matrix has negative eigenvalue {w[0]:.3e}")
        w = np.clip(w, 0.0, None)
        support = np.flatnonzero(w > SUPPORT_RTOL * w[-1])
        sqrt = (V * np.sqrt(w)) @ V.conj().T
        return cls(rho, w, V, support, sqrt)

    @property
    def dim(self):
        return self.matrix.shape[0]

    @property
    def rank(self):
        return len(self.support)

    @property
    def is_pure(self):
        return self.rank == 1

    def tensor_power(self, p):
        """``ρ^{⊗p}`` with its eigensystem assembled from the single-copy one."""
        if p == 1:
            return self
        mat = numlin.kron_power(self.matrix, p)
        w = self.eigenvalues
        for _ in range(p - 1):
            w = np.kron(w, self.eigenvalues)
        V = numlin.kron_power(self.eigenvectors, p)
        order = np.argsort(w, kind="stable")
        return DensityMatrix._from_eig(mat, w[order], V[:, order])


@dataclass(frozen=True, eq=False)
class StateModel:
    name: str
    kind: str
    n: int
    d: int
    density: Callable = field(repr=False)
    derivative: Optional[Callable] = field(default=None, repr=False)
    domain: tuple = ()
    params: dict = field(default_factory=dict)
    constraint: Optional[Callable] = field(default=None, repr=False)

    @property
    def derivative_mode(self):
        return "analytic" if self.derivative is not None else "finite-difference"

    def check_domain(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise InvalidInputError(
                f"model {self.name!r} takes {self.n} parameters, got shape {x.shape}"
            )
        for j, (value, (lo, hi)) in enumerate(zip(x, self.domain)):
            if not lo < value < hi:
                raise DomainError(
                    f"parameter x_{j + 1} = {float(value)!r} outside the open interval ({lo}, {hi}) "
                    f"of model {self.name!r}"
                )
        if self.constraint is not None:
            message = self.constraint(x)
            if message:
                raise DomainError(f"model {self.name!r}: {message}")
        return x


def evaluate(model, x):
    x = model.check_domain(x)
    return DensityMatrix.from_matrix(model.density(x))


def _central_difference(model, x, j, h):
    xp, xm = x.copy(), x.copy()
    xp[j] += h
    xm[j] -= h
    model.check_domain(xp)
    model.check_domain(xm)
    return (model.density(xp) - model.density(xm)) / (2 * h)


def finite_difference_tangent(model, x, step=None, richardson=False):
    """Central-difference tangents with ``h = step·max(1, |x_j|)``."""
    x = model.check_domain(x)
    rel = FD_REL_STEP if step is None else step
    out = []
    for j in range(model.n):
        h = rel * max(1.0, abs(x[j]))
        try:
            D = _central_difference(model, x, j, h)
        except DomainError as exc:
            raise DomainError(f"finite-difference step {h:.1e} leaves the domain: {exc}") from exc
        if richardson:
            D = (4 * _central_difference(model, x, j, h / 2) - D) / 3
        out.append((D + D.conj().T) / 2)
    return _finish_tangent(out)


def _finish_tangent(ops):
    ops = np.array([numlin.as_hermitian(D) for D in ops])
    # exact models are traceless; finite differences only to roundoff
    for D in ops:
        D -= np.trace(D) / D.shape[0] * np.eye(D.shape[0])
    return ops


def tangent(model, x, mode="auto", step=None, richardson=False):
    """``∂ρ/∂x_j`` for every parameter as an ``(n, d, d)`` array.

    ``mode`` is ``"auto"`` (analytic when available), ``"analytic"`` or
    ``"finite-difference"``.
    """
    if mode not in ("auto", "analytic", "finite-difference"):
        raise InvalidInputError(f"unknown tangent mode {mode!r}")
    if mode == "finite-difference" or (mode == "auto" and model.derivative is None):
        return finite_difference_tangent(model, x, step=step, richardson=richardson)
    if model.derivative is None:
        raise InvalidInputError(f"model {model.name!r} has no analytic derivative")
    x = model.check_domain(x)
    return _finish_tangent(model.derivative(x))


# --- built-in kinds -------------------------------------------------------

def _bloch_density(r):
    return (np.eye(2) + np.tensordot(r, PAULIS, axes=1)) / 2


def _qubit_ket(theta, phi):
    return np.array([np.cos(theta / 2), np.exp(1j * phi) * np.sin(theta / 2)])


def _qubit_ket_derivs(theta, phi):
    d_theta = np.array([-np.sin(theta / 2) / 2, np.exp(1j * phi) * np.cos(theta / 2) / 2])
    d_phi = np.array([0, 1j * np.exp(1j * phi) * np.sin(theta / 2)])
    return d_theta, d_phi


def _projector_derivs(theta, phi):
    psi = _qubit_ket(theta, phi)
    out = []
    for dpsi in _qubit_ket_derivs(theta, phi):
        A = np.outer(dpsi, psi.conj())
        out.append(A + A.conj().T)
    return out


_BLOCH_ANGLES = ((0.0, np.pi), (-2 * np.pi, 2 * np.pi))


def _pure_qubit(params):
    def density(x):
        psi = _qubit_ket(*x)
        return np.outer(psi, psi.conj())

    return dict(n=2, d=2, density=density, derivative=lambda x: _projector_derivs(*x),
                domain=_BLOCH_ANGLES)


def _noisy_qubit(params):
    eta = float(params.get("eta", 0.8))
    if not 0 < eta <= 1:
        raise InvalidInputError(f"noisy_qubit visibility eta must be in (0, 1], got {eta}")

    def density(x):
        psi = _qubit_ket(*x)
        return eta * np.outer(psi, psi.conj()) + (1 - eta) * np.eye(2) / 2

    def derivative(x):
        return [eta * D for D in _projector_derivs(*x)]

    return dict(n=2, d=2, density=density, derivative=derivative, domain=_BLOCH_ANGLES,
                params={"eta": eta})


def _inside_ball(x):
    if np.dot(x, x) >= 1.0:
        return f"Bloch vector norm {np.linalg.norm(x)!r} must be < 1"
    return None


def _bloch_3p(params):
    return dict(n=3, d=2, density=_bloch_density,
                derivative=lambda x: [P / 2 for P in PAULIS],
                domain=((-1.0, 1.0),) * 3, constraint=_inside_ball)


def _planar_bloch_2p(params):
    return dict(n=2, d=2, density=lambda x: _bloch_density(np.array([x[0], x[1], 0.0])),
                derivative=lambda x: [SIGMA_X / 2, SIGMA_Y / 2],
                domain=((-1.0, 1.0),) * 2, constraint=_inside_ball)


def _classical_2p(params):
    def density(x):
        return np.diag([x[0], x[1], 1 - x[0] - x[1]]).astype(complex)

    def constraint(x):
        if x[0] + x[1] >= 0.99:
            return f"x_1 + x_2 = {x[0] + x[1]!r} must be < 0.99"
        return None

    return dict(n=2, d=3, density=density,
                derivative=lambda x: [np.diag([1, 0, -1]).astype(complex),
                                      np.diag([0, 1, -1]).astype(complex)],
                domain=((0.01, 0.98), (0.01, 0.98)), constraint=constraint)


def _coin(params):
    return dict(n=1, d=2, density=lambda x: np.diag([x[0], 1 - x[0]]).astype(complex),
                derivative=lambda x: [np.diag([1, -1]).astype(complex)],
                domain=((0.01, 0.99),))


def _expm_derivative(G, H):
    """Directional derivative of ``exp(-iG)`` along ``H`` (Hermitian G, H)."""
    g, V = np.linalg.eigh(G)
    a = -1j * g
    delta = a[:, None] - a[None, :]
    ea = np.exp(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        phi = np.where(np.abs(delta) > 1e-8,
                       np.exp(a[None, :]) * np.expm1(delta) / delta,
                       np.exp(a[None, :]) * (1 + delta / 2))
    phi[np.diag_indices_from(phi)] = ea
    return V @ (phi * (V.conj().T @ (-1j * H) @ V)) @ V.conj().T


def _unitary(params):
    rho0_bloch = np.asarray(params.get("rho0", [0.0, 0.0, 0.6]), dtype=float)
    gens = np.asarray(params.get("generators", [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), dtype=float)
    if rho0_bloch.shape != (3,) or np.linalg.norm(rho0_bloch) >= 1:
        raise InvalidInputError("unitary model needs rho0 as a Bloch vector of norm < 1")
    if gens.ndim != 2 or gens.shape[1] != 3 or len(gens) < 1:
        raise InvalidInputError("unitary model needs generators as a list of 3-vectors")
    rho0 = _bloch_density(rho0_bloch)
    H = np.tensordot(gens, PAULIS, axes=([1], [0]))

    def unitary(x):
        G = np.tensordot(x, H, axes=1)
        g, V = np.linalg.eigh(G)
        return (V * np.exp(-1j * g)) @ V.conj().T, G

    def density(x):
        U, _ = unitary(x)
        return U @ rho0 @ U.conj().T

    def derivative(x):
        U, G = unitary(x)
        out = []
        for Hj in H:
            dU = _expm_derivative(G, Hj)
            A = dU @ rho0 @ U.conj().T
            out.append(A + A.conj().T)
        return out

    return dict(n=len(gens), d=2, density=density, derivative=derivative,
                domain=((-1.0, 1.0),) * len(gens),
                params={"rho0": rho0_bloch.tolist(), "generators": gens.tolist()})


KINDS = {
    "pure_qubit": _pure_qubit,
    "noisy_qubit": _noisy_qubit,
    "bloch_3p": _bloch_3p,
    "classical_2p": _classical_2p,
    "unitary": _unitary,
    "planar_bloch_2p": _planar_bloch_2p,
    "coin": _coin,
}

_DEFAULTS = [
    ("pure_qubit", "pure_qubit", {}),
    ("noisy_qubit", "noisy_qubit", {"eta": 0.8}),
    ("bloch_3p", "bloch_3p", {}),
    ("classical_2p", "classical_2p", {}),
    ("unitary_2p", "unitary", {}),
    ("planar_bloch_2p", "planar_bloch_2p", {}),
    ("coin", "coin", {}),
]


def build_model(kind, params=None, name=None):
    try:
        factory = KINDS[kind]
    except KeyError:
        raise ModelNotFoundError(
            f"unknown model kind {kind!r}; known kinds: {', '.join(sorted(KINDS))}"
        ) from None
    spec = factory(dict(params or {}))
    spec.setdefault("params", dict(params or {}))
    return StateModel(name=name or kind, kind=kind, **spec)


def registry():
    """Default instances of every built-in model."""
    return [build_model(kind, params, name) for name, kind, params in _DEFAULTS]


def get_model(name):
    for model_name, kind, params in _DEFAULTS:
        if model_name == name:
            return build_model(kind, params, model_name)
    names = ", ".join(n for n, _, _ in _DEFAULTS)
    raise ModelNotFoundError(f"unknown model {name!r}; registry contains: {names}")


def model_from_spec(spec):
    """Build a model from ``{"name", "n", "d", "kind", "params"}``."""
    if not isinstance(spec, dict):
        raise InvalidInputError("model spec must be a JSON object")
    unknown = set(spec) - {"name", "n", "d", "kind", "params"}
    if unknown:
        raise InvalidInputError(f"unknown model spec fields: {sorted(unknown)}")
    if "kind" not in spec:
        raise InvalidInputError("model spec needs a 'kind'")
    kind = spec["kind"]
    if kind == "unitary_2p":
        kind = "unitary"
    model = build_model(kind, spec.get("params"), spec.get("name", spec["kind"]))
    for key in ("n", "d"):
        if key in spec and spec[key] != getattr(model, key):
            raise InvalidInputError(
                f"model spec says {key}={spec[key]} but kind {spec['kind']!r} has "
                f"{key}={getattr(model, key)}"
            )
    return model


def random_unitary_model(rng, n=1, name="random_unitary"):
    """Qubit family ``U(x) ρ₀ U(x)†`` with random full-rank ``ρ₀`` and generators."""
    r = rng.normal(size=3)
    r *= rng.uniform(0.2, 0.9) / np.linalg.norm(r)
    gens = rng.normal(size=(n, 3))
    return build_model("unitary", {"rho0": r.tolist(), "generators": gens.tolist()}, name)


def sample_point(model, rng, margin=0.05):
    """A random interior point of the model's domain."""
    for _ in range(1000):
        x = np.array([rng.uniform(lo + margin * (hi - lo), hi - margin * (hi - lo))
                      for lo, hi in model.domain])
        if model.constraint is None:
            return x
        if model.constraint(x) is None and model.constraint(x * (1 + margin)) is None:
            return x
    raise DomainError(f"could not sample an interior point of {model.name!r}")
