"""Finite-difference oracle for the 1D ergodic (and discounted) Neumann problem

    1/2 sigma^2 v'' + f v' + psi(x, v' sigma) = lambda   (or = alpha v)
    v'(a) = v'(b) = 0

Unknowns are the ghost values beyond each wall, the nodal values and, in the
ergodic mode, lambda. The walls carry the centred condition
``(v_1 - v_{-1}) / 2h = 0``; the normalisation ``v(x_ref) = 0`` closes the
ergodic system. Newton's method with a sparse direct solve and step halving.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import spsolve


class PDEError(RuntimeError):
    pass


class EllipticityError(PDEError):
    pass


class NewtonDivergence(PDEError):
    def __init__(self, residual, iterations):
        self.residual, self.iterations = float(residual), int(iterations)
        super().__init__(f"Newton did not converge in {iterations} iterations "
                         f"(last residual {residual:.3e})")


@dataclass
class GridProblem:
    a: float
    b: float
    n_cells: int
    f: Callable  # x[m] -> [m]
    sigma: Callable  # x[m] -> [m]
    psi: Callable  # (x[m], z[m]) -> [m]
    mode: str = "ergodic"
    alpha: float = 0.0
    x_ref: float = 0.0
    M_psi: Optional[float] = None
    dpsi_dz: Optional[Callable] = None

    def __post_init__(self):
        if self.n_cells < 16:
            raise ValueError("n_cells must be >= 16")
        if not self.a < self.b:
            raise ValueError("need a < b")
        if self.mode not in ("ergodic", "discounted"):
            raise ValueError("mode must be 'ergodic' or 'discounted'")
        if self.mode == "discounted" and not self.alpha > 0:
            raise ValueError("discounted mode needs alpha > 0")
        if self.mode == "ergodic" and not self.a <= self.x_ref <= self.b:
            raise ValueError("x_ref must lie in [a, b]")

    @property
    def grid(self):
        return np.linspace(self.a, self.b, self.n_cells + 1)

    def with_(self, **kw):
        d = dict(self.__dict__)
        d.update(kw)
        return GridProblem(**d)


@dataclass
class PDEResult:
    x: np.ndarray
    v: np.ndarray
    lam: Optional[float]
    residual: float
    flux: tuple  # centred ghost-node v' at (a, b), the discrete Neumann condition
    iterations: int
    alpha: float = 0.0
    extra: dict = field(default_factory=dict)

    def interpolant(self):
        """C^2 spline through the nodes with v' = 0 at both walls."""
        return CubicSpline(self.x, self.v, bc_type=((1, 0.0), (1, 0.0)))

    def value_function(self, shift=0.0):
        return SplineFunction(self.interpolant(), shift)


class SplineFunction:
    """Vectorised ``x[n, 1] -> [n]`` wrapper with ``gradient`` (used like BasisFunction)."""

    def __init__(self, spline, shift=0.0):
        self.spline = spline
        self.shift = float(shift)

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        return self.spline(x[:, 0]) - self.shift

    def gradient(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        return self.spline(x[:, 0], 1)[:, None]

    def shifted(self, delta):
        return SplineFunction(self.spline, self.shift + delta)


def _ref_weights(x, x_ref, h):
    i = min(int(np.floor((x_ref - x[0]) / h)), len(x) - 2)
    w = (x_ref - x[i]) / h
    return i, w


def _solve(prob, v0=None, lam0=0.0, tol=1e-10, max_iter=50, fd_eps=1e-6):
    x = prob.grid
    N = prob.n_cells
    h = (prob.b - prob.a) / N
    s = np.asarray(prob.sigma(x), float)
    fx = np.asarray(prob.f(x), float)
    if np.min(np.abs(s)) < 1e-8:
        raise EllipticityError("sigma vanishes on the grid")
    half_s2 = 0.5 * s * s
    ergodic = prob.mode == "ergodic"
    n_nodes = N + 1
    size = n_nodes + 2 + (1 if ergodic else 0)
    # layout: [ghost_L, v_0..v_N, ghost_R, (lambda)]
    iv = np.arange(1, n_nodes + 1)
    ref_i, ref_w = _ref_weights(x, prob.x_ref, h)

    def dpsi(xx, z):
        if prob.dpsi_dz is not None:
            return prob.dpsi_dz(xx, z)
        return (prob.psi(xx, z + fd_eps) - prob.psi(xx, z - fd_eps)) / (2 * fd_eps)

    def residual(u):
        ext = u[: n_nodes + 2]
        v = ext[1:-1]
        up, um = ext[2:], ext[:-2]
        d1 = (up - um) / (2 * h)
        d2 = (up - 2 * v + um) / (h * h)
        z = d1 * s
        rhs = u[-1] if ergodic else prob.alpha * v
        pde = half_s2 * d2 + fx * d1 + prob.psi(x, z) - rhs
        walls = np.array([(ext[2] - ext[0]) / (2 * h), (ext[-1] - ext[-3]) / (2 * h)])
        out = [walls[:1], pde, walls[1:]]
        if ergodic:
            out.append(np.array([(1 - ref_w) * v[ref_i] + ref_w * v[min(ref_i + 1, N)]]))
        return np.concatenate(out), pde, d1

    def jacobian(u):
        ext = u[: n_nodes + 2]
        d1 = (ext[2:] - ext[:-2]) / (2 * h)
        pz = dpsi(x, d1 * s) * s
        # d(pde_i)/d(v_{i-1}), d(v_i), d(v_{i+1}) in extended indexing
        lo = half_s2 / h**2 - (fx + pz) / (2 * h)
        di = -2 * half_s2 / h**2 - (prob.alpha if not ergodic else 0.0)
        up = half_s2 / h**2 + (fx + pz) / (2 * h)
        rows = [0, 0]
        cols = [0, 2]
        vals = [-1 / (2 * h), 1 / (2 * h)]
        r = iv  # equation row for node i (row 0 is the left wall)
        rows += list(r) * 3
        cols += list(iv - 1) + list(iv) + list(iv + 1)
        vals += list(lo) + list(np.broadcast_to(di, n_nodes)) + list(up)
        rows += [n_nodes + 1, n_nodes + 1]
        cols += [n_nodes + 1, n_nodes - 1]
        vals += [1 / (2 * h), -1 / (2 * h)]
        if ergodic:
            rows += list(iv)
            cols += [size - 1] * n_nodes
            vals += [-1.0] * n_nodes
            rows += [size - 1, size - 1]
            cols += [1 + ref_i, 1 + min(ref_i + 1, N)]
            vals += [1 - ref_w, ref_w]
        return sp.csr_matrix((vals, (rows, cols)), shape=(size, size))

    u = np.zeros(size)
    if v0 is not None:
        u[1:n_nodes + 1] = v0
        u[0], u[n_nodes + 1] = v0[1], v0[-2]
    if ergodic:
        u[-1] = lam0
    F, pde, _ = residual(u)
    norm = np.abs(F).max()
    it = 0
    converged = norm <= tol
    while not converged and it < max_iter:
        it += 1
        step = spsolve(jacobian(u).tocsc(), -F)
        if not np.all(np.isfinite(step)):
            raise NewtonDivergence(norm, it)
        t = 1.0
        while True:
            trial = u + t * step
            Ft, pdet, _ = residual(trial)
            nt = np.abs(Ft).max()
            if nt < norm or t < 1e-3:
                break
            t *= 0.5
        u, F, pde, norm = trial, Ft, pdet, nt
        # round-off floor of the h^-2 stencil can sit above tol on fine grids
        scale = 1 + np.abs(u).max()
        converged = norm <= tol * scale or (t == 1.0 and np.abs(step).max() <= 1e-11 * scale)
    if not converged:
        raise NewtonDivergence(norm, it)
    v = u[1:n_nodes + 1]
    flux = ((u[2] - u[0]) / (2 * h), (u[n_nodes + 1] - u[n_nodes - 1]) / (2 * h))
    one_sided = ((-3 * v[0] + 4 * v[1] - v[2]) / (2 * h), (3 * v[-1] - 4 * v[-2] + v[-3]) / (2 * h))
    return PDEResult(x, v.copy(), float(u[-1]) if ergodic else None, float(np.abs(pde).max()),
                     flux, it, prob.alpha, {"one_sided_flux": one_sided})


def solve_ergodic_pde(prob, **kw):
    """Grid solution ``(v, lambda)`` with ``v(x_ref) = 0``."""
    if prob.mode != "ergodic":
        raise ValueError("problem mode must be 'ergodic'")
    return _solve(prob, **kw)


def solve_discounted_pde(prob, check_bound=True, **kw):
    """Grid solution of the alpha-discounted equation; asserts ``|v| <= M_psi/alpha``."""
    if prob.mode != "discounted":
        raise ValueError("problem mode must be 'discounted'")
    res = _solve(prob, **kw)
    if check_bound and prob.M_psi is not None:
        bound = prob.M_psi / prob.alpha
        excess = np.abs(res.v).max() - bound
        res.extra["bound_excess"] = float(excess)
        if excess > 1e-9 * max(bound, 1.0):
            raise PDEError(f"discounted solution exceeds M_psi/alpha by {excess:.3e}")
    return res


def grid_problem(model, driver, a, b, n_cells=400, mode="ergodic", alpha=0.0, x_ref=None,
                 dpsi_dz=None):
    """GridProblem from a 1D ModelSpec and DriverSpec."""
    if model.dim != 1:
        raise ValueError("the PDE oracle is one-dimensional")

    def col(x):
        return np.asarray(x, float).reshape(-1, 1)

    def f(x):
        return model.drift(col(x))[:, 0]

    def sigma(x):
        return model.diffusion(col(x))[:, 0, 0]

    def psi(x, z):
        return driver(col(x), col(z))

    if x_ref is None:
        x_ref = 0.0 if a <= 0.0 <= b else a
    return GridProblem(a, b, n_cells, f, sigma, psi, mode, alpha, x_ref, driver.M_psi, dpsi_dz)


def manufactured_problem(n_cells, lam0=0.7, sigma=1.0, a1=1.0):
    """``v0 = cos(pi x)`` on [-1, 1] with ``f = -a1 x``; returns (problem, v0)."""
    def v0(x):
        return np.cos(np.pi * x)

    def psi(x, z):
        dv = -np.pi * np.sin(np.pi * x)
        d2v = -np.pi**2 * np.cos(np.pi * x)
        return lam0 - 0.5 * sigma**2 * d2v - (-a1 * x) * dv

    prob = GridProblem(-1.0, 1.0, n_cells, lambda x: -a1 * x, lambda x: np.full_like(x, sigma),
                       psi, "ergodic", 0.0, 0.5)
    return prob, v0
