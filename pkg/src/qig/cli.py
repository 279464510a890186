"""Command-line entry point: ``qig <command> [options]``.

Every report carries the seed and a digest of the validated configuration.
Exit codes: 0 success, 2 configuration error, 3 computation error.
"""
import argparse
import csv
import hashlib
import io
import json
import sys

import numpy as np

from . import bounds_analytic, bounds_convex, estimation, measurement
from .errors import (
    ConvergenceError,
    DomainError,
    InvalidInputError,
    InvalidPOVMError,
    ModelNotFoundError,
    QigError,
    ResourceLimitError,
    UnsupportedArityError,
)
from .fisher import cfim, commutator_report, f_im, qfim, slds
from .models import evaluate, get_model, model_from_spec, registry, tangent

EXIT_OK, EXIT_CONFIG, EXIT_COMPUTE = 0, 2, 3
CONFIG_ERRORS = (InvalidInputError, ModelNotFoundError, DomainError, ResourceLimitError,
                 UnsupportedArityError, InvalidPOVMError)
COMMANDS = ("model", "qfim", "cfim", "bounds", "holevo", "nagaoka", "optimize", "simulate",
            "verify")
CONFIG_FIELDS = {"command", "model", "x", "p", "weight", "outcomes", "restarts", "iters", "shots",
                 "trials", "seed", "povm", "solver", "out", "format", "action"}


class ConfigError(InvalidInputError):
    pass


# --- serialization ------------------------------------------------------------

def to_plain(obj):
    """Convert numpy values to JSON-native types; complex becomes ``[re, im]``."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not np.isfinite(v):
            return str(v)
        return v
    return obj


def dumps(report):
    # float repr is the shortest string that round-trips
    return json.dumps(to_plain(report), sort_keys=True, indent=2) + "\n"


def flatten(obj, prefix=""):
    """``(path, value)`` rows for every leaf of a nested report."""
    if isinstance(obj, dict):
        for k in sorted(obj):
            yield from flatten(obj[k], f"{prefix}.{k}" if prefix else str(k))
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from flatten(v, f"{prefix}[{i}]")
    else:
        yield prefix, obj


def to_csv(report):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["path", "value"])
    for path, value in flatten(to_plain(report)):
        writer.writerow([path, "" if value is None else repr(value) if isinstance(value, float)
                         else value])
    return buf.getvalue()


def config_digest(config):
    keep = {k: v for k, v in config.items() if k not in ("out", "format")}
    blob = json.dumps(to_plain(keep), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# --- parsing ------------------------------------------------------------------

def _floats(text, what):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--{what} expects comma-separated numbers, got {text!r}") from None


def _ints(text, what):
    vals = _floats(text, what)
    if any(v != int(v) or v < 1 for v in vals):
        raise ConfigError(f"--{what} expects positive integers, got {text!r}")
    return [int(v) for v in vals]


def parse_weight(spec, n, F_Q):
    """``identity`` | ``f_q`` | rows ``a,b;c,d`` | JSON nested list."""
    if spec is None or spec == "identity":
        return np.eye(n)
    if spec == "f_q":
        return np.array(F_Q, dtype=float)
    try:
        W = np.array(json.loads(spec), dtype=float) if spec.strip().startswith("[") else \
            np.array([_floats(row, "weight") for row in spec.split(";")], dtype=float)
    except (ValueError, json.JSONDecodeError):
        raise ConfigError(f"cannot parse weight {spec!r}") from None
    if W.shape != (n, n):
        raise ConfigError(f"weight must be {n}x{n}, got shape {W.shape}")
    if not np.allclose(W, W.T) or np.linalg.eigvalsh((W + W.T) / 2)[0] < -1e-10:
        raise ConfigError("weight must be symmetric PSD")
    return (W + W.T) / 2


def load_model(spec):
    if spec is None:
        raise ConfigError("--model is required")
    if isinstance(spec, dict):
        return model_from_spec(spec)
    if spec.endswith(".json"):
        try:
            with open(spec) as fh:
                return model_from_spec(json.load(fh))
        except OSError as exc:
            raise ConfigError(f"cannot read model spec: {exc}") from None
    return get_model(spec)


def load_povm(path):
    try:
        with open(path) as fh:
            return measurement.Povm.from_json(json.load(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read POVM file: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"POVM file is not JSON: {exc}") from None


def build_parser():
    parser = argparse.ArgumentParser(prog="qig", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file with any of the options below")
    sub = parser.add_subparsers(dest="command")

    def common(p, *, p_list=False):
        p.add_argument("--model", help="registry name or path to a JSON model spec")
        p.add_argument("--x", help="comma-separated parameter values")
        if p_list:
            p.add_argument("--p", help="comma-separated locality list (default 1)")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="write the report here instead of stdout")
        p.add_argument("--format", choices=("json", "csv"))

    m = sub.add_parser("model", help="list registry models")
    m.add_argument("action", choices=("list",))
    m.add_argument("--out")
    m.add_argument("--format", choices=("json", "csv"))
    m.add_argument("--seed", type=int)

    common(sub.add_parser("qfim", help="SLDs, QFIM, F_Im and commutator checks"), p_list=True)
    c = sub.add_parser("cfim", help="classical Fisher information of a POVM")
    common(c)
    c.add_argument("--povm", help="POVM JSON file")
    b = sub.add_parser("bounds", help="analytic Γ_p bounds over a p list")
    common(b, p_list=True)
    b.add_argument("--weight")
    for name in ("holevo", "nagaoka"):
        h = sub.add_parser(name, help=f"{name} covariance bound")
        common(h)
        h.add_argument("--solver", help="JSON solver config")
        if name == "holevo":
            h.add_argument("--weight")
    o = sub.add_parser("optimize", help="search p-local POVMs for the largest Γ_p")
    common(o, p_list=True)
    o.add_argument("--outcomes", type=int)
    o.add_argument("--restarts", type=int)
    o.add_argument("--iters", type=int)
    o.add_argument("--povm", help="also write the best POVM JSON here")
    s = sub.add_parser("simulate", help="sampling + MLE covariance experiment")
    common(s)
    s.add_argument("--povm", help="POVM JSON file (default: optimized 1-local POVM)")
    s.add_argument("--shots", type=int)
    s.add_argument("--trials", type=int)
    s.add_argument("--weight")
    s.add_argument("--restarts", type=int)
    s.add_argument("--iters", type=int)
    v = sub.add_parser("verify", help="dominance and invariant checks")
    common(v)
    v.add_argument("--weight")
    return parser


DEFAULTS = {"p": "1", "seed": 0, "format": "json", "restarts": 4, "iters": 200,
            "shots": 10_000, "trials": 200}


def resolve_config(args):
    """Merge a ``--config`` file with command-line flags (flags win) and validate."""
    config = {}
    path = getattr(args, "config", None)
    if path:
        try:
            with open(path) as fh:
                config = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        if not isinstance(config, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(config) - CONFIG_FIELDS
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    for key, value in vars(args).items():
        if key != "config" and value is not None:
            config[key] = value
    if not config.get("command"):
        raise ConfigError(f"a command is required: {', '.join(COMMANDS)}")
    for key, value in DEFAULTS.items():
        config.setdefault(key, value)
    if isinstance(config.get("x"), list):
        config["x"] = ",".join(repr(float(v)) for v in config["x"])
    if isinstance(config.get("p"), (list, int)):
        ps = config["p"] if isinstance(config["p"], list) else [config["p"]]
        config["p"] = ",".join(str(v) for v in ps)
    if isinstance(config.get("weight"), list):
        config["weight"] = json.dumps(config["weight"])
    if isinstance(config.get("solver"), dict):
        config["solver"] = json.dumps(config["solver"], sort_keys=True)
    for key in ("restarts", "iters", "shots", "trials", "outcomes"):
        if key in config and config[key] is not None and int(config[key]) < 1:
            raise ConfigError(f"--{key} must be positive")
    return config


# --- commands -----------------------------------------------------------------

def _point(config, model):
    if "x" not in config:
        raise ConfigError("--x is required")
    x = np.array(_floats(config["x"], "x"))
    if len(x) != model.n:
        raise ConfigError(f"model {model.name!r} has n={model.n} parameters, got {len(x)} values")
    rho = evaluate(model, x)
    return x, rho, tangent(model, x)


def _solver(config):
    try:
        data = json.loads(config["solver"]) if config.get("solver") else {}
        return bounds_convex.SolverConfig.from_json(data)
    except (TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"invalid solver config: {exc}") from None


def _convex_json(result):
    return {"value": result.value, "iterations": result.iterations, "final_mu": result.final_mu,
            "stages": result.stages, "converged": result.converged,
            "smoothing_gap": result.smoothing_gap, "restart_values": result.restart_values,
            "label": "upper estimate of the infimum"}


def cmd_model(config):
    return {"models": [{"name": m.name, "kind": m.kind, "n": m.n, "d": m.d,
                        "domain": [list(iv) for iv in m.domain],
                        "derivative": m.derivative_mode} for m in registry()]}


def cmd_qfim(config):
    model = load_model(config.get("model"))
    x, rho, T = _point(config, model)
    L = slds(rho, T)
    F = qfim(rho, L).matrix
    rep = commutator_report(rho, L)
    out = {"qfim": F, "f_im": f_im(rho, L), "eigenvalues": rho.eigenvalues, "rank": rho.rank,
           "partial_max": rep.partial_max, "weak_max": rep.weak_max,
           "qfim_p": {str(p): p * F for p in _ints(config["p"], "p")}}
    return out


def cmd_cfim(config):
    model = load_model(config.get("model"))
    x, rho, T = _point(config, model)
    if not config.get("povm"):
        raise ConfigError("--povm is required for cfim")
    povm = load_povm(config["povm"])
    F_C = cfim(rho, T, povm).matrix
    return {"cfim": F_C, "povm_digest": povm.digest(), "p": povm.p,
            "gamma": measurement.gamma_of(model, x, povm)}


def cmd_bounds(config):
    model = load_model(config.get("model"))
    x, rho, T = _point(config, model)
    F_Q = qfim(rho, slds(rho, T)).matrix
    W = parse_weight(config.get("weight"), model.n, F_Q)
    reports = {}
    for p in _ints(config["p"], "p"):
        rep = bounds_analytic.compute_bounds(model, x, p, W=W, seed=config["seed"])
        reports[str(p)] = rep.to_json()
    return {"per_p": reports, "weight": W}


def cmd_holevo(config):
    model = load_model(config.get("model"))
    x, rho, T = _point(config, model)
    F_Q = qfim(rho, slds(rho, T)).matrix
    W = parse_weight(config.get("weight"), model.n, F_Q)
    solver = _solver(config)
    res = bounds_convex.holevo_bound(rho, T, W, solver)
    return {"holevo": _convex_json(res), "qcrb": float(np.trace(W @ np.linalg.inv(F_Q))),
            "weight": W}


def cmd_nagaoka(config):
    model = load_model(config.get("model"))
    x, rho, T = _point(config, model)
    F_Q = qfim(rho, slds(rho, T)).matrix
    res = bounds_convex.nagaoka_bound(rho, T, _solver(config))
    return {"nagaoka": _convex_json(res), "qcrb": float(np.trace(np.linalg.inv(F_Q)))}


def _optimize(model, x, p, config):
    return measurement.optimize_gamma(model, x, p, K=config.get("outcomes"),
                                      restarts=config["restarts"], iters=config["iters"],
                                      seed=config["seed"])


def cmd_optimize(config):
    model = load_model(config.get("model"))
    x, _, _ = _point(config, model)
    out = {}
    best_povm = None
    for p in _ints(config["p"], "p"):
        res = _optimize(model, x, p, config)
        out[str(p)] = {"gamma": res.value, "label": res.label, "restart_values": res.restart_values,
                       "iterations": res.iterations, "K": res.povm.K,
                       "povm_digest": res.povm.digest()}
        best_povm = res.povm
    if config.get("povm") and best_povm is not None:
        with open(config["povm"], "w") as fh:
            fh.write(dumps(best_povm.to_json()))
    return {"per_p": out}


def cmd_simulate(config):
    model = load_model(config.get("model"))
    x, rho, T = _point(config, model)
    if config.get("povm"):
        povm = load_povm(config["povm"])
    else:
        povm = measurement.optimize_weighted_crb(model, x, restarts=config["restarts"],
                                                 iters=config["iters"], seed=config["seed"]).povm
    ens = estimation.covariance_experiment(model, x, povm, config["shots"], config["trials"],
                                           config["seed"])
    F_Q = qfim(rho, slds(rho, T)).matrix
    W = parse_weight(config.get("weight"), model.n, F_Q)
    mean, se = ens.weighted_trace(W)
    bounds = {"qcrb": float(np.trace(W @ np.linalg.inv(F_Q))),
              "classical_crb": float(np.trace(W @ ens.fc_inv))}
    try:
        bounds["holevo"] = bounds_convex.holevo_bound(rho, T, W).value
    except QigError as exc:
        bounds["holevo"] = f"skipped: {exc}"
    out = estimation.report(model, ens, povm, bounds)
    out.update({"nu_tr_w_cov": mean, "nu_tr_w_cov_stderr": se,
                "relative_trace_deviation": ens.relative_trace_deviation()})
    return out


def cmd_verify(config):
    """Dominance of ``Cov_u`` over ``A_u`` and basic invariants at one point."""
    model = load_model(config.get("model"))
    x, rho, T = _point(config, model)
    rng = np.random.default_rng(config["seed"])
    L = slds(rho, T)
    F_Q = qfim(rho, L).matrix
    checks = {}
    worst_dpi, worst_dom, worst_res = np.inf, np.inf, 0.0
    for _ in range(20):
        povm = measurement.random_povm(rho.dim, rho.dim ** 2, rng)
        F_C = cfim(rho, T, povm).matrix
        worst_dpi = min(worst_dpi, float(np.linalg.eigvalsh(F_Q - F_C)[0]))
        if np.linalg.matrix_rank(F_C, tol=1e-10) < model.n:
            continue
        est = bounds_convex.locally_unbiased_estimator(rho, T, povm, x)
        u = rng.normal(size=rho.dim) + 1j * rng.normal(size=rho.dim)
        worst_dom = min(worst_dom, *bounds_convex.verify_dominance(rho, T, povm, est, x, u))
        frame = bounds_analytic.eigen_frame(rho)
        total = sum(bounds_convex.cov_u(rho, povm, est, x, uq) for uq in frame)
        cov = bounds_convex.estimator_covariance(rho, povm, est, x)
        worst_res = max(worst_res, float(np.max(np.abs(total - cov))))
    checks["data_processing"] = {"min_eig": worst_dpi, "passed": worst_dpi >= -1e-8}
    checks["dominance"] = {"min_eig": worst_dom, "passed": worst_dom >= -1e-9}
    checks["resolution"] = {"max_abs": worst_res, "passed": worst_res <= 1e-9}
    rep = commutator_report(rho, L)
    checks["commutators"] = {"partial_max": rep.partial_max, "weak_max": rep.weak_max,
                             "passed": True}
    return {"checks": checks, "all_passed": all(c["passed"] for c in checks.values())}


HANDLERS = {"model": cmd_model, "qfim": cmd_qfim, "cfim": cmd_cfim, "bounds": cmd_bounds,
            "holevo": cmd_holevo, "nagaoka": cmd_nagaoka, "optimize": cmd_optimize,
            "simulate": cmd_simulate, "verify": cmd_verify}


def run(config):
    """Execute a validated config; returns ``(exit_code, report)``."""
    result = HANDLERS[config["command"]](config)
    report = {"command": config["command"], "seed": config["seed"],
              "config_digest": config_digest(config), "result": result}
    if "model" in config:
        report["model"] = config["model"] if isinstance(config["model"], str) else \
            config["model"].get("name")
    if "x" in config:
        report["x"] = _floats(config["x"], "x")
    if config["command"] == "verify" and not result["all_passed"]:
        return EXIT_COMPUTE, report
    return EXIT_OK, report


def emit(report, config):
    text = to_csv(report) if config.get("format") == "csv" else dumps(report)
    if config.get("out"):
        with open(config["out"], "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args)
        code, report = run(config)
        emit(report, config)
        return code
    except CONFIG_ERRORS as exc:
        print(f"qig: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ConvergenceError as exc:
        print(f"qig: {exc} (best value {exc.best_value})", file=sys.stderr)
        return EXIT_COMPUTE
    except QigError as exc:
        print(f"qig: computation error: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except OSError as exc:
        print(f"qig: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

