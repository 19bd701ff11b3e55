"""Hamiltonian driver, optimal feedback and ergodic costs of control policies."""
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import rng
from .model import Box, ControlSpec, DriverSpec

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class FeedbackPolicy:
    gamma: Callable  # (x[n, d], z[n, d]) -> u[n, m]
    description: str = "argmin"

    def __call__(self, x, z):
        return self.gamma(x, z)


def _objective(ctrl, x, z, u):
    return ctrl.L(x, u) + np.einsum("nd,nd->n", z, ctrl.R(u))


def _finite_argmin(ctrl, x, z):
    U = np.atleast_2d(np.asarray(ctrl.control_set, float))
    if U.shape[0] == 0:
        raise ValueError("empty control set")
    n = x.shape[0]
    vals = np.empty((n, U.shape[0]))
    for j, u in enumerate(U):
        vals[:, j] = _objective(ctrl, x, z, np.broadcast_to(u, (n, U.shape[1])))
    # np.argmin returns the first minimiser: lowest-index tie-break
    return U[vals.argmin(axis=1)]


def _box_argmin(ctrl, x, z, refine_iter=60):
    box = ctrl.control_set
    n, m = x.shape[0], box.lo.size
    res = max(int(box.resolution), 2)
    axes = [np.linspace(box.lo[j], box.hi[j], res) for j in range(m)]
    # lexicographic grid order, so argmin ties resolve to the lexicographically smallest u
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
    best_v = np.full(n, np.inf)
    best_u = np.empty((n, m))
    for u in grid:
        v = _objective(ctrl, x, z, np.broadcast_to(u, (n, m)))
        better = v < best_v
        best_v[better] = v[better]
        best_u[better] = u
    step = (box.hi - box.lo) / (res - 1)
    # one coordinate sweep of golden-section search inside the neighbouring cells
    for j in range(m):
        a = np.maximum(best_u[:, j] - step[j], box.lo[j])
        b = np.minimum(best_u[:, j] + step[j], box.hi[j])

        def f(t):
            u = best_u.copy()
            u[:, j] = t
            return _objective(ctrl, x, z, u)

        c, d = b - _GOLDEN * (b - a), a + _GOLDEN * (b - a)
        fc, fd = f(c), f(d)
        for _ in range(refine_iter):
            left = fc <= fd
            # keep [a, d] on the left branch, [c, b] on the right
            b = np.where(left, d, b)
            a = np.where(left, a, c)
            keep = np.where(left, c, d)
            fkeep = np.where(left, fc, fd)
            new = np.where(left, b - _GOLDEN * (b - a), a + _GOLDEN * (b - a))
            fnew = f(new)
            c = np.where(left, new, keep)
            d = np.where(left, keep, new)
            fc = np.where(left, fnew, fkeep)
            fd = np.where(left, fkeep, fnew)
        t = 0.5 * (a + b)
        cand = best_u.copy()
        cand[:, j] = t
        v = _objective(ctrl, x, z, cand)
        better = v < best_v
        best_v[better] = v[better]
        best_u[better] = cand[better]
    return best_u


def hamiltonian_argmin(ctrl, x, z, use_closed_form=True):
    x = np.atleast_2d(np.asarray(x, float))
    z = np.atleast_2d(np.asarray(z, float))
    if use_closed_form and ctrl.minimizer is not None:
        return np.atleast_2d(np.asarray(ctrl.minimizer(x, z), float)).reshape(x.shape[0], -1)
    if ctrl.is_finite:
        return _finite_argmin(ctrl, x, z)
    return _box_argmin(ctrl, x, z)


def build_hamiltonian(ctrl, use_closed_form=True):
    """``psi(x, z) = inf_u {L(x, u) + z R(u)}`` and the minimiser selector.

    Finite sets are minimised exactly; boxes by grid search refined by golden
    section; a ControlSpec ``minimizer`` takes precedence when supplied.
    """
    if ctrl.is_finite and np.atleast_2d(np.asarray(ctrl.control_set, float)).size == 0:
        raise ValueError("empty control set")

    def gamma(x, z):
        return hamiltonian_argmin(ctrl, x, z, use_closed_form)

    def psi(x, z):
        x = np.atleast_2d(np.asarray(x, float))
        z = np.atleast_2d(np.asarray(z, float))
        return _objective(ctrl, x, z, gamma(x, z))

    tag = "closed-form" if use_closed_form and ctrl.minimizer is not None else (
        "finite" if ctrl.is_finite else "grid+golden")
    # with R == 0 the Hamiltonian does not see z
    driver = DriverSpec(psi, max(ctrl.M_L, ctrl.M_R), f"hamiltonian[{tag}]",
                        uses_z=ctrl.M_R > 0)
    return driver, FeedbackPolicy(gamma, tag)


# -- policies -----------------------------------------------------------------

def constant_policy(u0):
    u0 = np.atleast_1d(np.asarray(u0, float))

    def rho(t, x):
        return np.broadcast_to(u0, (x.shape[0], u0.size)).copy()

    rho.description = f"const:{u0.tolist()}"
    return rho


def feedback_policy(gamma, z_field):
    """``rho_t = gamma(X_t, Z(X_t))``."""
    def rho(t, x):
        return gamma(x, z_field(x))

    rho.description = "feedback"
    return rho


@dataclass
class CostReport:
    I_estimate: float
    stderr: float
    horizon_T: float
    burn_in: float
    method: str

    def summary(self):
        return {"I": self.I_estimate, "stderr": self.stderr, "T": self.horizon_T,
                "burn_in": self.burn_in, "method": self.method}


def _step(model, domain, ctrl, x, u, dw, dt):
    sig = model.diffusion(x)
    drift = model.drift(x) + np.einsum("nij,nj->ni", sig, ctrl.R(u))
    xt = x + drift * dt + np.einsum("nij,nj->ni", sig, dw)
    return xt if domain is None else domain.project(xt)


def ergodic_cost(model, domain, ctrl, policy, T, cfg, burn_in=None, x0=None):
    """Time average of ``L(X_t, rho_t)`` over ``[burn_in, T]`` under the controlled law.

    The controlled dynamics ``dX = (f + sigma R(rho)) dt + sigma dW`` are simulated
    directly with the projected scheme. ``burn_in`` defaults to ``T/2``; ``cfg``
    supplies ``dt``, ``n_paths`` and ``seed`` (its horizon is ignored).
    """
    burn_in = T / 2 if burn_in is None else burn_in
    dt = cfg.dt
    n_steps = int(round(T / dt))
    first = int(round(burn_in / dt))
    if n_steps <= first:
        raise ValueError("burn_in leaves no averaging window")
    n, d = cfg.n_paths, model.dim
    x = np.zeros((n, d)) if x0 is None else np.broadcast_to(np.asarray(x0, float), (n, d)).copy()
    keys = rng.path_keys(rng.derive_seed(cfg.seed, "control"), np.arange(n))
    acc = np.zeros(n)
    for k in range(n_steps):
        u = policy(k * dt, x)
        if k >= first:
            acc += ctrl.L(x, u) * dt
        x = _step(model, domain, ctrl, x, u, rng.brownian_increments(keys, k, d, dt), dt)
        if not np.all(np.isfinite(x)) or not np.all(np.isfinite(acc)):
            raise FloatingPointError(f"non-finite cost accumulation at step {k}")
    per_path = acc / ((n_steps - first) * dt)
    se = per_path.std(ddof=1) / math.sqrt(n) if n > 1 else float("nan")
    return CostReport(float(per_path.mean()), float(se), T, burn_in, "direct")


def ergodic_cost_girsanov(model, domain, ctrl, policy, T, cfg, burn_in=0.0, x0=None):
    """Same functional estimated under the uncontrolled law with the density

    ``Gamma_T = exp(sum R(rho) dW - 1/2 sum |R(rho)|^2 dt)``. Only sensible for
    short horizons, where the weights stay well conditioned.
    """
    dt = cfg.dt
    n_steps = int(round(T / dt))
    first = int(round(burn_in / dt))
    if n_steps <= first:
        raise ValueError("burn_in leaves no averaging window")
    n, d = cfg.n_paths, model.dim
    x = np.zeros((n, d)) if x0 is None else np.broadcast_to(np.asarray(x0, float), (n, d)).copy()
    keys = rng.path_keys(rng.derive_seed(cfg.seed + 1, "control"), np.arange(n))
    acc = np.zeros(n)
    log_w = np.zeros(n)
    zero = None
    for k in range(n_steps):
        u = policy(k * dt, x)
        if k >= first:
            acc += ctrl.L(x, u) * dt
        dw = rng.brownian_increments(keys, k, d, dt)
        r = ctrl.R(u)
        log_w += np.einsum("nd,nd->n", r, dw) - 0.5 * np.einsum("nd,nd->n", r, r) * dt
        if zero is None:
            zero = np.zeros_like(u)
        x = _step(model, domain, ctrl, x, zero, dw, dt)
    vals = np.exp(log_w) * acc / ((n_steps - first) * dt)
    se = vals.std(ddof=1) / math.sqrt(n) if n > 1 else float("nan")
    return CostReport(float(vals.mean()), float(se), T, burn_in, "girsanov")


# -- catalog ------------------------------------------------------------------

def quadratic_cosine_control(u_max=1.0):
    """U = [-u_max, u_max], R(u) = u, L(x, u) = cos(x_1) + u^2/2 (1D state)."""
    def R(u):
        return u[:, :1]

    def L(x, u):
        return np.cos(x[:, 0]) + 0.5 * u[:, 0] ** 2

    def minimizer(x, z):
        return np.clip(-z[:, :1], -u_max, u_max)

    return ControlSpec(Box([-u_max], [u_max], resolution=201), R, L, u_max,
                       1.0 + 0.5 * u_max**2, minimizer)


def bang_bang_control(r=1.0, kappa=0.5, ell=None):
    """U = {-1, 1}, R(u) = r u, L(x, u) = ell(x) + kappa u."""
    ell = ell or (lambda x: np.cos(x[:, 0]))

    def R(u):
        return r * u[:, :1]

    def L(x, u):
        return ell(x) + kappa * u[:, 0]

    return ControlSpec(np.array([[-1.0], [1.0]]), R, L, abs(r), 1.0 + abs(kappa))


def constant_cost_control(c=1.0):
    """U = {-1, 0, 1}, R = 0, L = c: every policy costs c."""
    def R(u):
        return np.zeros((u.shape[0], 1))

    def L(x, u):
        return np.full(x.shape[0], float(c))

    return ControlSpec(np.array([[-1.0], [0.0], [1.0]]), R, L, 0.0, abs(float(c)))


CONTROL_PRESETS = {
    "quadratic_cosine": quadratic_cosine_control,
    "bang_bang": bang_bang_control,
    "constant_cost": constant_cost_control,
}


def make_control(preset="quadratic_cosine", **params):
    if preset not in CONTROL_PRESETS:
        raise KeyError(f"unknown control preset {preset!r}")
    return CONTROL_PRESETS[preset](**params)
