"""Ergodic constant by vanishing discount, uniqueness check, Neumann transforms
and the EBSDE residual.
"""
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .basis import BasisFunction
from .bsde import (BSDEConfig, reference_point, regression_region, solve_discounted,
                   transition_sample)
from .sde import time_average


class LambdaConvergenceWarning(UserWarning):
    pass


@dataclass
class ErgodicSolution:
    lam: float
    vbar: Callable  # x[n, d] -> [n], with .gradient
    x_ref: np.ndarray
    diffusion: Optional[Callable] = None
    alpha_trace: list = field(default_factory=list)
    lam_ci: tuple = (float("nan"), float("nan"))
    r_fit: float = float("nan")
    mu: Optional[float] = None
    notes: list = field(default_factory=list)
    solutions: list = field(default_factory=list, repr=False)

    def z(self, x):
        """``Z(x) = grad vbar(x) sigma(x)`` as rows ``[n, d]``."""
        x = np.atleast_2d(np.asarray(x, float))
        return np.einsum("nd,nde->ne", self.vbar.gradient(x), self.diffusion(x))

    def summary(self):
        return {"lambda": self.lam, "ci": list(self.lam_ci), "r_fit": self.r_fit,
                "x_ref": np.asarray(self.x_ref).tolist(), "mu": self.mu, "notes": self.notes}

    @classmethod
    def from_pde(cls, result, model):
        """Wrap a PDE-oracle ergodic solve (1D) as an ErgodicSolution."""
        xr = np.array([0.0 if result.x[0] <= 0.0 <= result.x[-1] else result.x[0]])
        fn = result.value_function()
        fn = fn.shifted(float(fn(xr[None])[0]))
        return cls(result.lam, fn, xr, model.diffusion, notes=["finite-difference oracle"])


def richardson(alphas, lams, r_bounds=(0.05, 5.0), rel_noise=1e-10):
    """Limit of ``lam(a) = lam + c a^r`` from the last three points.

    Returns ``(lam, r, halfwidth, ok)``. With vanishing differences the last value
    is returned as exact; with non-monotone or unbracketed data the last value is
    returned with ``ok = False`` and a halfwidth covering the observed spread.
    """
    a = np.asarray(alphas, float)[-3:]
    l = np.asarray(lams, float)[-3:]
    if a.size < 3:
        return float(l[-1]), float("nan"), float(np.ptp(l)) if l.size > 1 else 0.0, l.size > 1
    d1, d2 = l[0] - l[1], l[1] - l[2]
    scale = max(1.0, np.abs(l).max())
    if abs(d1) <= rel_noise * scale and abs(d2) <= rel_noise * scale:
        return float(l[-1]), float("nan"), 0.0, True
    if d1 * d2 <= 0:
        return float(l[-1]), float("nan"), float(np.ptp(l)), False

    def eq(r):
        return (a[0]**r - a[1]**r) * d2 - (a[1]**r - a[2]**r) * d1

    lo, hi = r_bounds
    if eq(lo) * eq(hi) > 0:
        return float(l[-1]), float("nan"), float(np.ptp(l)), False
    r = brentq(eq, lo, hi, xtol=1e-12)
    c = d2 / (a[1]**r - a[2]**r)
    lam = l[2] - c * a[2]**r
    return float(lam), float(r), float(abs(lam - l[2])), True


def _probe_points(lo, hi, n=201, seed=0):
    if lo.size == 1:
        return np.linspace(lo[0], hi[0], n)[:, None]
    return np.random.default_rng(seed).uniform(lo, hi, size=(n * lo.size, lo.size))


def _relative(fn, x_ref):
    """``fn - fn(x_ref)`` without the discounted bound, which no longer applies."""
    raw = BasisFunction(fn.basis, fn.coef)
    return raw.shifted(raw(x_ref[None])[0])


def vanishing_discount(model, domain, driver, alpha_schedule=(0.2, 0.1, 0.05, 0.02, 0.01),
                       cfg=None, keep_solutions=False):
    """Discounted solves along a decreasing schedule and the extrapolated lambda.

    All alphas share one transition sample, so lambda^alpha is a smooth function
    of alpha and the Richardson fit sees discretisation trends rather than noise.
    """
    alphas = np.asarray(alpha_schedule, float)
    if alphas.size < 1 or np.any(alphas <= 0) or np.any(np.diff(alphas) >= 0):
        raise ValueError("alpha schedule must be strictly decreasing and positive")
    cfg = cfg or BSDEConfig()
    lo, hi = regression_region(domain, model.dim, cfg.region)
    sample = transition_sample(model, domain, lo, hi, cfg.n_samples, cfg.dt, cfg.seed, cfg.backend)
    probes = _probe_points(lo, hi)
    if domain is not None:
        probes = probes[domain.contains(probes, atol=1e-12)]
    x_ref = reference_point(domain, model.dim)
    trace, sols, prev = [], [], None
    for a in alphas:
        sol = solve_discounted(model, domain, driver, float(a), cfg, sample=sample)
        rel = _relative(sol.value_fn, x_ref)
        cur = rel(probes)
        change = float("nan") if prev is None else float(np.abs(cur - prev).max())
        trace.append({"alpha": float(a), "lambda_alpha": sol.lambda_alpha, "sup_change": change})
        prev = cur
        sols.append(sol)
    lams = [t["lambda_alpha"] for t in trace]
    lam, r, half, ok = richardson(alphas, lams)
    notes = []
    if not ok:
        msg = "lambda^alpha sequence is not monotone over the schedule tail; using the last value"
        warnings.warn(msg, LambdaConvergenceWarning, stacklevel=2)
        notes.append(msg)
    vbar = _relative(sols[-1].value_fn, x_ref)
    return ErgodicSolution(lam, vbar, x_ref, model.diffusion, trace, (lam - half, lam + half), r,
                           None, notes, sols if keep_solutions else [])


def growth_certificate(vbar, points):
    """Smallest ``C`` with ``|vbar(x)| <= C (1 + |x|^2)`` on the sampled points."""
    x = np.atleast_2d(np.asarray(points, float))
    return float(np.max(np.abs(vbar(x)) / (1.0 + np.einsum("nd,nd->n", x, x))))


@dataclass
class UniquenessReport:
    start_points: np.ndarray
    lambdas: np.ndarray
    stderrs: np.ndarray
    max_spread: float
    threshold: float
    passed: bool


def long_run_driver_average(model, domain, driver, z_field, x0, cfg, burn_in=None,
                            path_offset=0):
    """Per-path ``(1/T) sum psi(X_t, Z(X_t)) dt`` after a burn-in (default T/10)."""
    burn_in = cfg.horizon_T / 10 if burn_in is None else burn_in

    def fn(t, x):
        return driver(x, z_field(x))

    return time_average(model, domain, x0, cfg.replace(seed=cfg.seed + path_offset), fn, burn_in)


def check_lambda_uniqueness(model, domain, driver, start_points, cfg, solution=None,
                            z_field=None, tol_rel=0.05, burn_in=None):
    """Long-run averages of the driver along the frozen Z-field from each start.

    ``z_field`` defaults to the solution's ``grad vbar sigma``; pass e.g.
    ``lambda x: 0 * x`` to inject a deliberately wrong field. Each start uses its
    own random stream. The spread threshold is ``tol_rel (|lambda| + 0.1)`` with
    lambda the solution's constant when given, else the mean estimate.
    """
    pts = np.atleast_2d(np.asarray(start_points, float))
    if pts.shape[0] < 2:
        raise ValueError("need at least two start points")
    if domain is not None and not np.all(domain.contains(pts, atol=1e-12)):
        raise ValueError("start points must lie in the closure of G")
    if z_field is None:
        if solution is None:
            raise ValueError("pass a solution or an explicit z_field")
        z_field = solution.z
    lams, ses = [], []
    for i, x in enumerate(pts):
        avg = long_run_driver_average(model, domain, driver, z_field, x, cfg, burn_in,
                                      path_offset=1_000_003 * i)
        lams.append(avg.mean())
        ses.append(avg.std(ddof=1) / math.sqrt(len(avg)) if len(avg) > 1 else 0.0)
    lams = np.array(lams)
    spread = float(lams.max() - lams.min())
    ref = solution.lam if solution is not None else float(lams.mean())
    thr = tol_rel * (abs(ref) + 0.1)
    return UniquenessReport(pts, lams, np.array(ses), spread, thr, spread <= thr)


def _boundary_integral(g, mu, bundle):
    """Cumulative left-endpoint sum ``sum_{s<t} (g(X_s) - mu) dK_s``, ``[n, n_rec]``."""
    if bundle.local_time is None:
        raise ValueError("bundle has no local-time channel")
    X = bundle.states
    n, n_rec, d = X.shape
    dK = np.diff(bundle.local_time, axis=1)
    gx = g(X[:, :-1].reshape(-1, d)).reshape(n, n_rec - 1)
    out = np.zeros((n, n_rec))
    np.cumsum((gx - mu) * dK, axis=1, out=out[:, 1:])
    return out


def neumann_transform_fixed_mu(zero_sol, g, mu, bundle):
    """Trajectory values ``vbar(X_t) - sum (g(X_s) - mu) dK_s``, ``[n_paths, n_rec]``.

    These are per-path values, not a function of X_t alone.
    """
    X = bundle.states
    n, n_rec, d = X.shape
    base = zero_sol.vbar(X.reshape(-1, d)).reshape(n, n_rec)
    return base - _boundary_integral(g, mu, bundle)


def neumann_transform_fixed_lambda(zero_sol, target_lambda, g, mu, bundle):
    """As ``neumann_transform_fixed_mu`` plus the drift ``(target - lambda0) t``."""
    shift = (target_lambda - zero_sol.lam) * (bundle.times - bundle.times[0])
    return neumann_transform_fixed_mu(zero_sol, g, mu, bundle) + shift[None, :]


@dataclass
class ResidualReport:
    mean_abs: float  # mean over paths and pairs of |defect|
    deterministic: float  # mean over pairs of |path-mean defect|
    deterministic_se: float
    pairs: np.ndarray  # start indices t of the (t, T) pairs
    per_pair_mean: np.ndarray

    def __float__(self):
        return self.mean_abs


def ebsde_residual(Y, z_field, driver, lam, g, mu, bundle, n_pairs=10):
    """Discrete defect of the ergodic BSDE with Neumann term on pairs ``(t, T)``.

    ``defect = Y_t - Y_T - sum (psi - lam) dt - sum (g - mu) dK + sum Z dW``
    with left-endpoint sums, ``Z = z_field(X)``, T the final stored time and t
    running over ``n_pairs`` equally spaced start times. Pass ``g=None`` for the
    zero-Neumann problem. Returns a ResidualReport (``float()`` gives the mean
    absolute defect).
    """
    if bundle.record_every != 1:
        raise ValueError("residual needs every step recorded")
    if g is not None and bundle.local_time is None:
        raise ValueError("Neumann term needs a local-time channel")
    X = bundle.states
    n, n_rec, d = X.shape
    dt = bundle.dt
    Y = np.asarray(Y, float)
    if Y.shape != (n, n_rec):
        raise ValueError("Y must have shape (n_paths, n_rec)")
    starts = np.unique(np.linspace(0, n_rec - 2, n_pairs).astype(int))
    want = {int(k): j for j, k in enumerate(starts)}
    defect = np.empty((n, len(starts)))
    tail = np.zeros(n)
    # backward accumulation of the increments over [k, T); one step in memory
    for k in range(n_rec - 2, -1, -1):
        x = X[:, k]
        z = np.asarray(z_field(x), float).reshape(n, d)
        incr = (driver(x, z) - lam) * dt - np.einsum("nd,nd->n", z, bundle.increments(k))
        if g is not None:
            incr += (g(x) - mu) * (bundle.local_time[:, k + 1] - bundle.local_time[:, k])
        tail += incr
        if k in want:
            defect[:, want[k]] = Y[:, k] - Y[:, -1] - tail
    means = defect.mean(axis=0)
    se = defect.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(means)
    return ResidualReport(float(np.abs(defect).mean()), float(np.abs(means).mean()),
                          float(se.mean()), starts, means)
