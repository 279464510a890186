"""Monte-Carlo outcome sampling and maximum-likelihood estimation."""
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import DomainError, InitializationError, InvalidInputError, InvalidPOVMError
from .fisher import cfim, outcome_probabilities, tensor_state
from .models import evaluate, tangent

PROB_CLAMP = -1e-10
PROB_DRIFT = 1e-8
BOUNDARY_MARGIN = 1e-9
STATIONARITY_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class OutcomeSample:
    counts: np.ndarray
    shots: int
    seed: object = None


@dataclass(eq=False)
class TrialEnsemble:
    """Per-trial estimates and their empirical statistics.

    ``nu_cov`` is ``shots · Cov(x̂)`` around the true point; ``flagged``
    counts trials whose MLE did not reach a stationary interior point.
    """

    x: np.ndarray
    estimates: np.ndarray
    shots: int
    seed: object
    flagged: int = 0
    fc_inv: np.ndarray = None
    extra: dict = field(default_factory=dict)

    @property
    def trials(self):
        return len(self.estimates)

    @property
    def mean(self):
        return self.estimates.mean(axis=0)

    @property
    def deviations(self):
        return self.estimates - self.x[None, :]

    @property
    def covariance(self):
        dev = self.deviations
        C = dev.T @ dev / len(dev)
        return (C + C.T) / 2

    @property
    def nu_cov(self):
        return self.shots * self.covariance

    def weighted_trace(self, W=None):
        """``ν·Tr[W Cov]`` and its standard error over trials."""
        dev = self.deviations
        W = np.eye(dev.shape[1]) if W is None else np.asarray(W, dtype=float)
        per_trial = self.shots * np.einsum("tj,jk,tk->t", dev, W, dev)
        return float(per_trial.mean()), float(per_trial.std(ddof=1) / np.sqrt(len(per_trial)))

    def relative_trace_deviation(self):
        if self.fc_inv is None:
            return None
        ref = np.trace(self.fc_inv)
        return float((np.trace(self.nu_cov) - ref) / ref)


def _probabilities(rho_matrix, elements):
    probs = outcome_probabilities(rho_matrix, elements)
    if probs.min() < PROB_CLAMP:
        raise InvalidPOVMError(f"negative outcome probability {probs.min():.3e}")
    probs = np.clip(probs, 0.0, None)
    drift = abs(probs.sum() - 1)
    if drift > PROB_DRIFT:
        raise InvalidPOVMError(f"outcome probabilities sum to 1 + {drift:.3e}")
    return probs / probs.sum()


def _state_for(rho, povm):
    if rho.dim == povm.dim:
        return rho
    if rho.dim ** povm.p == povm.dim:
        return rho.tensor_power(povm.p)
    raise InvalidInputError(f"POVM dimension {povm.dim} does not fit state dimension {rho.dim}")


def sample(rho, povm, shots, seed=None):
    """Multinomial outcome counts of ``shots`` repetitions of ``povm``.

    A POVM acting on ``p`` copies consumes ``p`` copies per shot.
    """
    if shots < 1:
        raise InvalidInputError("shots must be positive")
    probs = _probabilities(_state_for(rho, povm).matrix, np.asarray(povm.elements))
    rng = np.random.default_rng(seed)
    return OutcomeSample(rng.multinomial(int(shots), probs), int(shots), seed)


class _Likelihood:
    def __init__(self, model, povm):
        self.model = model
        self.povm = povm
        self.E = np.asarray(povm.elements)
        self.p = povm.p

    def probs_and_grad(self, x):
        rho = evaluate(self.model, x)
        T = tangent(self.model, x)
        if self.p > 1:
            rho, T = tensor_state(rho, T, self.p)
        probs = outcome_probabilities(rho.matrix, self.E)
        dprobs = np.einsum("jab,kba->kj", T, self.E).real
        return probs, dprobs

    def negloglik(self, x, counts):
        try:
            probs, dprobs = self.probs_and_grad(x)
        except DomainError:
            return np.inf, np.zeros(len(x))
        used = counts > 0
        if np.any(probs[used] <= 0):
            return np.inf, np.zeros(len(x))
        pr = probs[used]
        value = -float(counts[used] @ np.log(pr))
        grad = -(counts[used] / pr) @ dprobs[used]
        return value, grad


def _bounds(model):
    out = []
    for lo, hi in model.domain:
        width = hi - lo
        out.append((lo + BOUNDARY_MARGIN * max(1.0, width), hi - BOUNDARY_MARGIN * max(1.0, width)))
    return out


def mle(model, povm, sample_, x0, return_info=False):
    """Maximize ``Σ_α n_α log p(α|x)`` over the model's box domain.

    Box-shaped domains are enforced by L-BFGS-B; extra domain constraints
    (such as ``|r| < 1``) make the likelihood infinite outside, which the
    line search backs away from.
    """
    like = _Likelihood(model, povm)
    counts = np.asarray(sample_.counts, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    value, _ = like.negloglik(x0, counts)
    if not np.isfinite(value):
        raise InitializationError(f"log-likelihood is not finite at x0 = {x0.tolist()}")
    scale = counts.sum()

    def fun(x):
        v, g = like.negloglik(x, counts)
        return v / scale, g / scale

    res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=_bounds(model),
                   options={"maxiter": 500, "ftol": 1e-15, "gtol": 1e-12})
    x = _polish(like, counts, res.x, _bounds(model))
    grad = like.negloglik(x, counts)[1]
    lo, hi = np.array(_bounds(model)).T
    interior = bool(np.all((x > lo + 1e-7) & (x < hi - 1e-7)))
    grad_norm = float(np.linalg.norm(grad))
    stationary = interior and grad_norm <= STATIONARITY_TOL
    if return_info:
        return x, {"interior": interior, "grad_norm": grad_norm, "flagged": not stationary,
                   "iterations": int(res.nit)}
    return x


def _polish(like, counts, x, bounds, steps=8):
    """Fisher-scoring steps ``x += (ν F_C)^{-1} ∇ log L`` kept only while they help."""
    lo, hi = np.array(bounds).T
    value, grad = like.negloglik(x, counts)
    for _ in range(steps):
        probs, dprobs = like.probs_and_grad(x)
        keep = probs > 1e-300
        info = counts.sum() * (dprobs[keep] / probs[keep, None]).T @ dprobs[keep]
        try:
            step = np.linalg.solve(info, -grad)
        except np.linalg.LinAlgError:
            break
        trial = np.clip(x + step, lo, hi)
        new_value, new_grad = like.negloglik(trial, counts)
        if not np.isfinite(new_value) or np.linalg.norm(new_grad) >= np.linalg.norm(grad):
            break
        x, value, grad = trial, new_value, new_grad
    return x


def closed_form_coin_mle(sample_):
    """Frequency estimate for a two-outcome diagonal family."""
    return np.array([sample_.counts[0] / sample_.shots])


def covariance_experiment(model, x, povm, shots=10_000, trials=200, seed=0):
    """Repeat sample + MLE ``trials`` times with per-trial seeds spawned from ``seed``."""
    if trials < 50:
        raise InvalidInputError("covariance experiments need at least 50 trials")
    x = np.asarray(x, dtype=float)
    rho = evaluate(model, x)
    T = tangent(model, x)
    F_C = cfim(rho, T, povm).matrix
    fc_inv = np.linalg.pinv(F_C)
    seeds = np.random.SeedSequence(seed).spawn(trials)
    estimates = np.empty((trials, len(x)))
    flagged = 0
    for t, s in enumerate(seeds):
        draw = sample(rho, povm, shots, np.random.default_rng(s))
        est, info = mle(model, povm, draw, x, return_info=True)
        estimates[t] = est
        flagged += info["flagged"]
    return TrialEnsemble(x, estimates, shots, seed, flagged, fc_inv)


def report(model, ensemble, povm, bounds=None):
    """Experiment report dictionary (see the CLI's ``simulate`` command)."""
    return {
        "model": model.name,
        "x": ensemble.x.tolist(),
        "povm_digest": povm.digest(),
        "shots": ensemble.shots,
        "trials": ensemble.trials,
        "nu_cov": ensemble.nu_cov.tolist(),
        "fc_inv": None if ensemble.fc_inv is None else ensemble.fc_inv.tolist(),
        "flagged": ensemble.flagged,
        "bounds": dict(bounds or {}),
    }

