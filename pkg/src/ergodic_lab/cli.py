"""Command-line driver: configuration, subcommand dispatch and artifact writing.

Exit codes: 0 ok, 2 configuration error, 3 numerical failure, 4 acceptance
check failed.
"""
import argparse
import copy
import csv
import hashlib
import json
import os
import platform
import sys
from dataclasses import dataclass, field
from importlib import metadata

import numpy as np

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, _accel, rng
from .bsde import (BSDEConfig, RegressionError, evaluate_value, reference_point,
                   regression_region, solve_discounted)
from .control import (CONTROL_PRESETS, build_hamiltonian, constant_policy, ergodic_cost,
                      feedback_policy, make_control)
from .domain import make_domain
from .ergodic import ErgodicSolution, vanishing_discount
from .mixing import estimate_semigroup_gap
from .model import (DRIVER_PRESETS, MODEL_PRESETS, HypothesisError, check_control,
                    check_dissipativity, check_driver, check_sigma_structure,
                    default_pair_sampler, make_driver, make_model)
from .pde import PDEError, grid_problem, solve_discounted_pde, solve_ergodic_pde
from .sde import (SimConfig, estimate_moments, simulate_reflected, simulate_unreflected,
                  write_moment_table)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4
OUTPUT_ENV = "ERGODIC_LAB_OUTPUT"

TOL_LAMBDA = 2e-2
TOL_CONTROL = 5e-2
TOL_EXACT = 1e-6


class ConfigError(ValueError):
    def __init__(self, kind, message):
        self.kind = kind
        super().__init__(f"{kind}: {message}")


DEFAULTS = {
    "seed": 0,
    "output": None,
    "model": {"preset": "reflected_ou", "dim": 1},
    "domain": {"kind": "box", "lo": [-1.0], "hi": [1.0]},
    "driver": {"preset": "cosine"},
    "control": None,
    "scheme": {"dt": 0.01, "T": 20.0, "n_paths": 2000, "n_penal": 0, "x0": None},
    "bsde": {"dt": 0.01, "n_samples": 10000, "degree": 4, "basis": "auto", "region": None},
    "alpha_schedule": [0.2, 0.1, 0.05, 0.02, 0.01],
    "pde": {"n_cells": 400},
    "mixing": {"x": [1.0], "y": [-1.0], "T": 4.0, "n_paths": 20000, "dt": 0.01},
    "simulate": {"powers": [2.0]},
    "control_eval": {"T": 20.0, "policy": "optimal"},
}

EXPERIMENT_PRESETS = {
    "reflected_ou_cosine": {
        "model": {"preset": "reflected_ou"},
        "domain": {"kind": "box", "lo": [-1.0], "hi": [1.0]},
        "control": {"preset": "quadratic_cosine"},
    },
    "constant_driver": {
        "model": {"preset": "reflected_ou"},
        "domain": {"kind": "box", "lo": [-1.0], "hi": [1.0]},
        "driver": {"preset": "constant", "c": 0.7},
        "control": {"preset": "constant_cost", "c": 0.7},
        "bsde": {"n_samples": 2000},
        "scheme": {"n_paths": 200, "T": 4.0},
        "control_eval": {"T": 4.0},
    },
    "paper_sigma": {
        "model": {"preset": "paper_sigma"},
        "domain": {"kind": "whole_space"},
        "bsde": {"region": [[-3.0], [3.0]]},
    },
    "linear": {
        "model": {"preset": "linear"},
        "domain": {"kind": "whole_space"},
        "bsde": {"region": [[-3.0], [3.0]]},
    },
    "cubic_sin": {
        "model": {"preset": "cubic_sin"},
        "domain": {"kind": "whole_space"},
        "bsde": {"region": [[-2.0], [2.0]]},
    },
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _parse_value(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(cfg, item):
    """Apply one ``dotted.key=value`` override; values are parsed as TOML."""
    if "=" not in item:
        raise ConfigError("invalid-override", f"expected key=value, got {item!r}")
    key, text = item.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if node.get(p) is None:
            node[p] = {}
        node = node[p]
        if not isinstance(node, dict):
            raise ConfigError("invalid-override", f"{key!r} does not name a section")
    node[parts[-1]] = _parse_value(text.strip())
    return cfg


@dataclass
class ExperimentConfig:
    raw: dict
    model: object
    domain: object
    driver: object
    control: object
    policy: object
    sim: SimConfig
    bsde: BSDEConfig
    alphas: tuple
    seed: int
    extras: dict = field(default_factory=dict)

    @property
    def config_hash(self):
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _params(section, skip):
    return {k: v for k, v in section.items() if k not in skip}


def _positive(name, value, integer=False):
    if integer and (not isinstance(value, int) or value < 1):
        raise ConfigError("invalid-range", f"{name} must be a positive integer")
    if not integer and not float(value) > 0:
        raise ConfigError("invalid-range", f"{name} must be positive")


def load_config(path=None, preset=None, overrides=()):
    """Merge defaults, a preset, a TOML file and overrides, then validate."""
    raw = copy.deepcopy(DEFAULTS)
    if preset is not None:
        if preset not in EXPERIMENT_PRESETS:
            raise ConfigError("unknown-preset", f"experiment preset {preset!r}")
        raw = _merge(raw, EXPERIMENT_PRESETS[preset])
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = _merge(raw, tomllib.load(fh))
        except OSError as exc:
            raise ConfigError("unreadable-config", str(exc)) from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("parse-error", str(exc)) from exc
    for item in overrides:
        apply_override(raw, item)
    return resolve(raw)


def resolve(raw):
    """Build the model objects from a raw config dict; raises ConfigError."""
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("invalid-range", "seed must be a nonnegative integer")
    m = raw["model"]
    if m.get("preset") not in MODEL_PRESETS:
        raise ConfigError("unknown-preset", f"model preset {m.get('preset')!r}")
    dim = m.get("dim", 1)
    _positive("model.dim", dim, integer=True)
    try:
        model = make_model(m["preset"], dim=dim, **_params(m, ("preset", "dim")))
    except (TypeError, ValueError) as exc:
        raise ConfigError("invalid-range", f"model: {exc}") from exc

    d = raw["domain"]
    kind = d.get("kind")
    if kind == "whole_space":
        domain = None
    elif kind in ("box", "ball", "half_space"):
        try:
            domain = make_domain(kind, **_params(d, ("kind",)))
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError("invalid-range", f"domain: {exc}") from exc
        if domain.dim != dim:
            raise ConfigError("invalid-range", "domain and model dimensions differ")
    else:
        raise ConfigError("unknown-preset", f"domain kind {kind!r}")

    control = policy = None
    c = raw.get("control")
    if c:
        if c.get("preset") not in CONTROL_PRESETS:
            raise ConfigError("unknown-preset", f"control preset {c.get('preset')!r}")
        try:
            control = make_control(c["preset"], **_params(c, ("preset",)))
        except (TypeError, ValueError) as exc:
            raise ConfigError("invalid-range", f"control: {exc}") from exc
        driver, policy = build_hamiltonian(control)
    else:
        dr = raw["driver"]
        if dr.get("preset") not in DRIVER_PRESETS:
            raise ConfigError("unknown-preset", f"driver preset {dr.get('preset')!r}")
        try:
            driver = make_driver(dr["preset"], **_params(dr, ("preset",)))
        except (TypeError, ValueError) as exc:
            raise ConfigError("invalid-range", f"driver: {exc}") from exc

    s = raw["scheme"]
    for key in ("dt", "T"):
        _positive(f"scheme.{key}", s[key])
    _positive("scheme.n_paths", s["n_paths"], integer=True)
    if not isinstance(s.get("n_penal", 0), int) or s.get("n_penal", 0) < 0:
        raise ConfigError("invalid-range", "scheme.n_penal must be a nonnegative integer")
    try:
        sim = SimConfig(float(s["dt"]), float(s["T"]), int(s["n_paths"]), seed)
    except ValueError as exc:
        raise ConfigError("invalid-range", f"scheme: {exc}") from exc

    b = raw["bsde"]
    _positive("bsde.dt", b["dt"])
    _positive("bsde.n_samples", b["n_samples"], integer=True)
    region = b.get("region")
    if domain is None and region is None:
        raise ConfigError("invalid-range", "unbounded domain needs bsde.region = [lo, hi]")
    try:
        bcfg = BSDEConfig(dt=float(b["dt"]), n_samples=int(b["n_samples"]),
                          basis=b.get("basis", "auto"), degree=int(b.get("degree", 4)),
                          region=None if region is None else tuple(region), seed=seed)
    except ValueError as exc:
        raise ConfigError("invalid-range", f"bsde: {exc}") from exc

    alphas = tuple(float(a) for a in raw["alpha_schedule"])
    if not alphas or any(a <= 0 for a in alphas) or any(np.diff(alphas) >= 0):
        raise ConfigError("invalid-range", "alpha_schedule must be positive and decreasing")
    n_cells = raw["pde"].get("n_cells", 400)
    if not isinstance(n_cells, int) or n_cells < 16:
        raise ConfigError("invalid-range", "pde.n_cells must be an integer >= 16")
    return ExperimentConfig(raw, model, domain, driver, control, policy, sim, bcfg, alphas, seed)


# -- artifacts -------------------------------------------------------------------

def _versions():
    out = {"ergodic_lab": __version__, "python": platform.python_version()}
    for pkg in ("numpy", "scipy", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def _sha256(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


class Run:
    """Output directory plus the list of artifacts for the manifest."""

    def __init__(self, cfg, subcommand, outdir):
        self.cfg, self.subcommand, self.outdir = cfg, subcommand, outdir
        self.artifacts = []
        try:
            os.makedirs(outdir, exist_ok=True)
            probe = os.path.join(outdir, ".write_test")
            with open(probe, "w"):
                pass
            os.remove(probe)
        except OSError as exc:
            raise ConfigError("unwritable-output", f"{outdir}: {exc}") from exc

    def path(self, name):
        self.artifacts.append(name)
        return os.path.join(self.outdir, name)

    def write_json(self, name, doc):
        with open(self.path(name), "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)

    def write_csv(self, name, header, rows):
        with open(self.path(name), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                            for v in row])

    def manifest(self, status, extra=None):
        doc = {
            "subcommand": self.subcommand,
            "status": status,
            "config_hash": self.cfg.config_hash,
            "seed": self.cfg.seed,
            "config": self.cfg.raw,
            "versions": _versions(),
            "backend": "numba" if _accel.numba_enabled() else "numpy",
            "artifacts": {a: _sha256(os.path.join(self.outdir, a)) for a in self.artifacts},
        }
        if extra:
            doc.update(extra)
        with open(os.path.join(self.outdir, "manifest.json"), "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)


def _probe_grid(cfg, n=101):
    lo, hi = regression_region(cfg.domain, cfg.model.dim, cfg.bsde.region)
    if cfg.model.dim == 1:
        return np.linspace(lo[0], hi[0], n)[:, None]
    rs = np.random.default_rng(rng.derive_seed(cfg.seed, "model-check"))
    return rs.uniform(lo, hi, size=(n * cfg.model.dim, cfg.model.dim))


def _x0(cfg):
    x0 = cfg.raw["scheme"].get("x0")
    if x0 is None:
        return reference_point(cfg.domain, cfg.model.dim)
    return np.broadcast_to(np.asarray(x0, float), (cfg.model.dim,)).copy()


def _constant_driver(cfg):
    # a z-free driver constant on the probe grid: both solvers must be exact
    if cfg.driver.uses_z:
        return False
    x = _probe_grid(cfg)
    return np.ptp(cfg.driver(x, np.zeros_like(x))) == 0


def _pde_interval(cfg):
    if cfg.model.dim != 1 or cfg.domain is None or cfg.domain.bounds() is None:
        return None
    lo, hi = cfg.domain.bounds()
    return float(lo[0]), float(hi[0])


# -- subcommands -----------------------------------------------------------------

def cmd_check_hypotheses(cfg, run, args):
    dim = cfg.model.dim
    sampler = default_pair_sampler(dim, seed=rng.derive_seed(cfg.seed, "model-check"))
    dis = check_dissipativity(cfg.model, sampler)
    sig = check_sigma_structure(cfg.model, sampler)
    drv = check_driver(cfg.driver, dim, seed=rng.derive_seed(cfg.seed, "model-check"))
    doc = {
        "dissipativity": {"passed": dis.passed, "worst_ratio": dis.worst_ratio, "eta": cfg.model.eta},
        "sigma": {"passed": sig.passed, "Lambda": sig.Lambda_est, "inv_norm_sq": sig.inv_norm_sq,
                  "condition_value": sig.condition_value},
        "driver": {"passed": drv.passed, "lipschitz": drv.worst_lipschitz,
                   "bound": drv.worst_bound, "M_psi": cfg.driver.M_psi},
    }
    ok = dis.passed and sig.passed and drv.passed
    if cfg.control is not None:
        doc["control"] = {"passed": bool(check_control(cfg.control, dim))}
        ok = ok and doc["control"]["passed"]
    doc["passed"] = bool(ok)
    run.write_json("hypotheses.json", doc)
    return doc, EXIT_OK if ok else EXIT_CHECK


def cmd_simulate(cfg, run, args):
    sim = cfg.sim.replace(record_every=max(1, int(round(0.1 / cfg.sim.dt))))
    x0 = _x0(cfg)
    if cfg.domain is None:
        bundle = simulate_unreflected(cfg.model, x0, sim)
    else:
        bundle = simulate_reflected(cfg.model, cfg.domain, x0, sim)
    table = estimate_moments(bundle, cfg.raw["simulate"].get("powers", [2.0]))
    write_moment_table(table, run.path("moments.csv"))
    last = table[table["t"] == table["t"].max()]
    doc = {"scheme": bundle.scheme, "n_paths": bundle.n_paths, "T": float(bundle.times[-1]),
           "final_moments": {repr(float(r["p"])): float(r["estimate"]) for r in last}}
    run.write_json("simulate.json", doc)
    return doc, EXIT_OK


def cmd_mixing(cfg, run, args):
    mx = cfg.raw["mixing"]
    dt = float(mx.get("dt", 0.01))
    sim = SimConfig(dt, float(mx.get("T", 4.0)), int(mx.get("n_paths", 20000)), cfg.seed,
                    record_every=max(1, int(round(0.05 / dt))))
    reports = estimate_semigroup_gap(cfg.model, mx["x"], mx["y"], cfg=sim, domain=cfg.domain)
    for r in reports:
        r.write_csv(run.path(f"mixing_{r.test_function_id}.csv"))
    doc = {"reports": [r.summary() for r in reports]}
    run.write_json("mixing.json", doc)
    return doc, EXIT_OK


def cmd_solve_discounted(cfg, run, args):
    alpha = args.alpha if args.alpha is not None else cfg.alphas[-1]
    if not alpha > 0:
        raise ConfigError("invalid-range", "alpha must be positive")
    sol = solve_discounted(cfg.model, cfg.domain, cfg.driver, alpha, cfg.bsde)
    sol.to_json(run.path("discounted_solution.json"))
    x = _probe_grid(cfg)
    v = evaluate_value(sol, x)
    run.write_csv("values.csv", [f"x{i}" for i in range(x.shape[1])] + ["v"],
                  [tuple(xi) + (vi,) for xi, vi in zip(x, v)])
    bound = cfg.driver.M_psi / alpha
    doc = {"alpha": alpha, "lambda_alpha": sol.lambda_alpha, "sup_abs_v": float(np.abs(v).max()),
           "bound": bound, "truncation_T": sol.truncation_T, "diagnostics": sol.diagnostics}
    run.write_json("discounted.json", doc)
    return doc, EXIT_OK


def _estimate_lambda(cfg, run, alphas):
    es = vanishing_discount(cfg.model, cfg.domain, cfg.driver, alphas, cfg.bsde)
    run.write_csv("alpha_trace.csv", ["alpha", "lambda_alpha", "sup_change"],
                  [(t["alpha"], t["lambda_alpha"], t["sup_change"]) for t in es.alpha_trace])
    doc = {"lambda": es.lam, "ci": list(es.lam_ci), "r_fit": es.r_fit, "notes": es.notes}
    run.write_json("lambda.json", doc)
    return es, doc


def cmd_estimate_lambda(cfg, run, args):
    alphas = cfg.alphas
    if args.alphas:
        try:
            alphas = tuple(float(a) for a in args.alphas.split(","))
        except ValueError as exc:
            raise ConfigError("invalid-range", f"--alphas: {exc}") from exc
        if any(a <= 0 for a in alphas) or any(np.diff(alphas) >= 0):
            raise ConfigError("invalid-range", "--alphas must be positive and decreasing")
    _, doc = _estimate_lambda(cfg, run, alphas)
    return doc, EXIT_OK


def _solve_pde(cfg, run, n_cells, mode="ergodic", alpha=0.0):
    interval = _pde_interval(cfg)
    if interval is None:
        raise ConfigError("invalid-range", "the PDE oracle needs a 1D bounded domain")
    prob = grid_problem(cfg.model, cfg.driver, *interval, n_cells=n_cells, mode=mode, alpha=alpha)
    res = solve_ergodic_pde(prob) if mode == "ergodic" else solve_discounted_pde(prob)
    run.write_csv("pde.csv", ["x", "v"], zip(res.x, res.v))
    doc = {"lambda": res.lam, "residual": res.residual, "flux": list(res.flux),
           "iterations": res.iterations, "mode": mode, "alpha": alpha, "n_cells": n_cells}
    run.write_json("pde.json", doc)
    return res, doc


def cmd_solve_pde(cfg, run, args):
    n_cells = args.grid if args.grid is not None else cfg.raw["pde"]["n_cells"]
    if n_cells < 16:
        raise ConfigError("invalid-range", "--grid must be >= 16")
    alpha = args.alpha if args.alpha is not None else 0.0
    if args.mode == "discounted" and not alpha > 0:
        raise ConfigError("invalid-range", "discounted mode needs --alpha > 0")
    _, doc = _solve_pde(cfg, run, n_cells, args.mode, alpha)
    return doc, EXIT_OK


def _policy_from_file(path, dim):
    """JSON ``{"type": "const", "u": [...]}`` or 1D ``{"type": "table", "x": [...], "u": [...]}``."""
    try:
        with open(path) as fh:
            spec = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError("invalid-policy", f"{path}: {exc}") from exc
    if spec.get("type") == "const":
        return constant_policy(spec["u"])
    if spec.get("type") == "table" and dim == 1:
        xs, us = np.asarray(spec["x"], float), np.asarray(spec["u"], float)

        def rho(t, x):
            return np.interp(x[:, 0], xs, us)[:, None]

        rho.description = f"table:{path}"
        return rho
    raise ConfigError("invalid-policy", f"{path}: unsupported policy spec")


def _make_policy(cfg, text, es):
    if text == "optimal":
        return feedback_policy(cfg.policy, es.z)
    if text.startswith("const:"):
        try:
            u = [float(v) for v in text[6:].split(",")]
        except ValueError as exc:
            raise ConfigError("invalid-policy", text) from exc
        return constant_policy(u)
    if text.startswith("file:"):
        return _policy_from_file(text[5:], cfg.model.dim)
    raise ConfigError("invalid-policy", f"unknown policy {text!r}")


def _control_eval(cfg, run, policy_text, T, es, lam_ref):
    if cfg.control is None:
        raise ConfigError("invalid-range", "control-eval needs a [control] section")
    policy = _make_policy(cfg, policy_text, es)
    sim = cfg.sim.replace(horizon_T=T) if T > cfg.sim.dt else None
    if sim is None:
        raise ConfigError("invalid-range", "--T must exceed the time step")
    rep = ergodic_cost(cfg.model, cfg.domain, cfg.control, policy, T, sim, x0=_x0(cfg))
    doc = {"policy": policy_text, "I": rep.I_estimate, "stderr": rep.stderr, "T": T,
           "burn_in": rep.burn_in, "lambda_ref": lam_ref, "gap": rep.I_estimate - lam_ref}
    run.write_json("control.json", doc)
    return doc


def _reference_lambda(cfg, run):
    """Ergodic solution and reference constant: PDE oracle in 1D on a bounded interval."""
    if _pde_interval(cfg) is not None:
        res, _ = _solve_pde(cfg, run, cfg.raw["pde"]["n_cells"])
        return ErgodicSolution.from_pde(res, cfg.model), res.lam
    es, _ = _estimate_lambda(cfg, run, cfg.alphas)
    return es, es.lam


def cmd_control_eval(cfg, run, args):
    T = args.T if args.T is not None else float(cfg.raw["control_eval"]["T"])
    policy = args.policy or cfg.raw["control_eval"]["policy"]
    es, lam = _reference_lambda(cfg, run)
    doc = _control_eval(cfg, run, policy, T, es, lam)
    return doc, EXIT_OK


def cmd_full_pipeline(cfg, run, args):
    es, lam_doc = _estimate_lambda(cfg, run, cfg.alphas)
    rows = []
    lam_ref = es.lam
    if _pde_interval(cfg) is not None:
        res, _ = _solve_pde(cfg, run, cfg.raw["pde"]["n_cells"])
        lam_ref = res.lam
        tol = TOL_EXACT if _constant_driver(cfg) else TOL_LAMBDA
        rows.append(("lambda_mc_vs_pde", es.lam, res.lam, abs(es.lam - res.lam), tol))
    if cfg.control is not None:
        T = float(cfg.raw["control_eval"]["T"])
        doc = _control_eval(cfg, run, "optimal", T, es, lam_ref)
        rows.append(("control_optimal_vs_lambda", doc["I"], lam_ref, abs(doc["gap"]), TOL_CONTROL))
    table = [(name, v, ref, gap, tol, "pass" if gap <= tol else "fail")
             for name, v, ref, gap, tol in rows]
    run.write_csv("comparison.csv", ["quantity", "value", "reference", "gap", "tolerance",
                                     "status"], table)
    ok = all(r[-1] == "pass" for r in table)
    doc = {"lambda_mc": es.lam, "lambda_ref": lam_ref, "passed": ok,
           "comparison": [dict(zip(("quantity", "value", "reference", "gap", "tolerance",
                                    "status"), r)) for r in table]}
    run.write_json("pipeline.json", doc)
    return doc, EXIT_OK if ok else EXIT_CHECK


COMMANDS = {
    "check-hypotheses": cmd_check_hypotheses,
    "simulate": cmd_simulate,
    "mixing": cmd_mixing,
    "solve-discounted": cmd_solve_discounted,
    "estimate-lambda": cmd_estimate_lambda,
    "solve-pde": cmd_solve_pde,
    "control-eval": cmd_control_eval,
    "full-pipeline": cmd_full_pipeline,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="ergodic-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML experiment file")
    common.add_argument("--preset", help=f"experiment preset: {', '.join(EXPERIMENT_PRESETS)}")
    common.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config entry (dotted key)")
    common.add_argument("--output", help=f"output directory (default ${OUTPUT_ENV}/<run>)")
    common.add_argument("--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "solve-discounted":
            p.add_argument("--alpha", type=float)
        elif name == "estimate-lambda":
            p.add_argument("--alphas", help="comma-separated decreasing schedule")
        elif name == "solve-pde":
            p.add_argument("--grid", type=int)
            p.add_argument("--mode", choices=("ergodic", "discounted"), default="ergodic")
            p.add_argument("--alpha", type=float)
        elif name == "control-eval":
            p.add_argument("--policy", help="optimal | const:<u> | file:<spec.json>")
            p.add_argument("--T", type=float)
    return parser


def _output_dir(cfg, args):
    if args.output:
        return args.output
    if cfg.raw.get("output"):
        return cfg.raw["output"]
    root = os.environ.get(OUTPUT_ENV, "ergodic_lab_runs")
    return os.path.join(root, f"{args.command}-{cfg.config_hash[:12]}")


def run(argv=None):
    """Parse ``argv``, execute the subcommand and return the exit code."""
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.preset, args.overrides)
        out = Run(cfg, args.command, _output_dir(cfg, args))
    except ConfigError as exc:
        print(f"config error {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        doc, code = COMMANDS[args.command](cfg, out, args)
    except ConfigError as exc:
        print(f"config error {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, np.linalg.LinAlgError, RegressionError, PDEError,
            HypothesisError, ArithmeticError) as exc:
        out.manifest("numerical-failure", {"error": str(exc)})
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    out.manifest("ok" if code == EXIT_OK else "check-failed")
    if not args.quiet:
        print(json.dumps(doc, indent=2, sort_keys=True, default=float))
        print(f"artifacts: {out.outdir}")
    return code


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
