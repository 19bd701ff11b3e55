"""Discounted infinite-horizon BSDE by horizon truncation and backward regression.

A single transition sample ``(X, X', dW)`` is drawn once: ``X`` uniform on the
regression region (intersected with the closure of G), ``X'`` one step of the
forward scheme from ``X``. Every backward slice regresses on that sample, so the
recursion is a value iteration

    Z_k = E[(Y_{k+1}(X') - Y_{k+1}(X)) dW / dt | X]
    Y_k = E[Y_{k+1}(X') + dt psi(X, Z_k) | X] / (1 + alpha dt)

run from ``Y_N = psi(., 0)/alpha`` over a horizon long enough that the
discounted tail is below ``trunc_tol``. The Y target subtracts the Ito
martingale part of ``Y_{k+1}`` over the step (the ``grad Y sigma dW`` term and
its second-order companion), which has conditional mean zero and removes the
noise that otherwise swamps the one-step regression.

The intercept has zero gradient, so it never enters Z. Once the other
coefficients are stationary the intercept follows a scalar affine recursion,
which is advanced in closed form over the remaining slices.
"""
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import rng
from .basis import Basis, BasisFunction, ExtrapolationWarning, ridge_projector
from .kernels import run_simulation

FORMAT = "ergodic_lab.discounted/1"


class RegressionError(np.linalg.LinAlgError):
    def __init__(self, basis_id, time_slice):
        self.basis_id, self.time_slice = basis_id, time_slice
        super().__init__(f"rank-deficient design matrix for basis {basis_id} "
                         f"at time slice {time_slice}")


@dataclass(frozen=True)
class BSDEConfig:
    dt: float = 0.01
    n_samples: int = 20_000
    # "auto": Neumann cosines on bounded domains, Legendre polynomials otherwise
    basis: str = "auto"
    degree: int = 4
    region: Optional[tuple] = None  # (lo, hi); defaults to the domain bounds
    trunc_tol: Optional[float] = None  # default 1e-4 * M_psi / alpha
    ridge: float = 1e-8
    seed: int = 0
    max_slices: int = 200
    z_method: str = "regression"  # or "gradient": Z = grad(v) sigma of the next slice
    # subtract grad(v)(X) sigma(X) dW (conditional mean zero) from the Y target
    control_variate: bool = True
    # jump the intercept recursion once the other coefficients are stationary
    accelerate: bool = True
    backend: Optional[str] = None

    def __post_init__(self):
        if self.dt <= 0 or self.n_samples < 1 or self.degree < 0:
            raise ValueError("invalid BSDE solver configuration")
        if self.z_method not in ("regression", "gradient"):
            raise ValueError("z_method must be 'regression' or 'gradient'")

    def replace(self, **kw):
        d = asdict(self)
        d.update(kw)
        return BSDEConfig(**d)


@dataclass
class DiscountedSolution:
    alpha: float
    value_fn: BasisFunction
    slice_times: np.ndarray
    slice_coefs: np.ndarray  # [n_slices, K]
    z_coef: np.ndarray  # regressed Z at time 0, [K, d]
    lambda_alpha: float
    truncation_T: float
    x_ref: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    diffusion: Optional[object] = field(default=None, repr=False)

    @property
    def bound(self):
        return self.value_fn.bound

    def to_json(self, path=None):
        doc = {
            "format": FORMAT,
            "alpha": self.alpha,
            "basis_id": self.value_fn.basis.id,
            "value_fn": self.value_fn.to_dict(),
            "slice_times": self.slice_times.tolist(),
            "slice_coefs": self.slice_coefs.tolist(),
            "z_coef": self.z_coef.tolist(),
            "lambda_alpha": self.lambda_alpha,
            "truncation_T": self.truncation_T,
            "x_ref": self.x_ref.tolist(),
            "diagnostics": self.diagnostics,
        }
        text = json.dumps(doc)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_json(cls, src, model=None):
        """Load from a path or JSON text; pass ``model`` to enable evaluate_z."""
        if isinstance(src, str) and src.lstrip().startswith("{"):
            doc = json.loads(src)
        else:
            with open(src) as fh:
                doc = json.load(fh)
        if doc.get("format") != FORMAT:
            raise ValueError("not a discounted-solution file")
        return cls(doc["alpha"], BasisFunction.from_dict(doc["value_fn"]),
                   np.array(doc["slice_times"]), np.array(doc["slice_coefs"]),
                   np.array(doc["z_coef"]), doc["lambda_alpha"], doc["truncation_T"],
                   np.array(doc["x_ref"]), doc["diagnostics"],
                   None if model is None else model.diffusion)


def reference_point(domain, dim):
    """0 when it lies in the closure of G, else the domain anchor."""
    zero = np.zeros((1, dim))
    if domain is None or domain.contains(zero, atol=1e-12)[0]:
        return np.zeros(dim)
    return np.asarray(domain.anchor_c, float).copy()


def regression_region(domain, dim, region=None):
    if region is not None:
        lo, hi = (np.broadcast_to(np.asarray(v, float), (dim,)).copy() for v in region)
        return lo, hi
    bounds = None if domain is None else domain.bounds()
    if bounds is None:
        raise ValueError("unbounded domain: pass BSDEConfig.region=(lo, hi)")
    return bounds


def transition_sample(model, domain, lo, hi, n, dt, seed, backend=None):
    """``(X, X', dW)`` with X uniform on ``[lo, hi]`` intersected with the closure of G."""
    gen = np.random.default_rng(rng.derive_seed(seed, "bsde"))
    d = lo.size
    pts = np.empty((0, d))
    while len(pts) < n:
        cand = gen.uniform(lo, hi, size=(2 * n, d))
        if domain is not None:
            cand = cand[domain.contains(cand, atol=0.0)]
        pts = np.concatenate([pts, cand])
    X = np.ascontiguousarray(pts[:n])
    keys = rng.path_keys(rng.derive_seed(seed, "bsde"), np.arange(n))
    project = domain is not None and domain.kind != "whole_space"
    states, _ = run_simulation(model, domain, X, keys, dt, 1, 1, project=project, backend=backend)
    dW = rng.brownian_increments(keys, 0, d, dt)
    return X, states[:, 1], dW


def truncation_horizon(M_psi, alpha, trunc_tol, dt):
    """Smallest multiple of dt with ``M_psi exp(-alpha T)/alpha <= trunc_tol``."""
    if M_psi <= 0:
        return dt
    T = max(math.log(M_psi / (alpha * trunc_tol)) / alpha, dt)
    return math.ceil(T / dt - 1e-9) * dt


def solve_discounted(model, domain, driver, alpha, cfg=None, sample=None):
    """Regression solution of the alpha-discounted BSDE.

    ``sample`` may carry a precomputed ``(X, X', dW)`` so several alphas share
    one transition sample. Values are truncated to the a priori bound
    ``M_psi/alpha``.
    """
    cfg = cfg or BSDEConfig()
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if alpha > 1:
        warnings.warn("alpha > 1 is outside the intended range (0, 1]", stacklevel=2)
    d = model.dim
    lo, hi = regression_region(domain, d, cfg.region)
    kind = cfg.basis
    if kind == "auto":
        kind = "cosine" if domain is not None and domain.bounded else "legendre"
    basis = Basis(lo, hi, cfg.degree, kind)
    if sample is None:
        sample = transition_sample(model, domain, lo, hi, cfg.n_samples, cfg.dt, cfg.seed,
                                   cfg.backend)
    X, X1, dW = sample
    dt = cfg.dt
    M = float(driver.M_psi)
    bound = M / alpha
    trunc_tol = cfg.trunc_tol if cfg.trunc_tol is not None else 1e-4 * max(M, 1e-300) / alpha
    T = truncation_horizon(M, alpha, trunc_tol, dt)
    n_steps = int(round(T / dt))

    Phi = basis.values(X)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExtrapolationWarning)
        Phi1 = basis.values(X1)
    try:
        P = ridge_projector(Phi, cfg.ridge)
    except np.linalg.LinAlgError:
        raise RegressionError(basis.id, n_steps) from None
    need_grad = cfg.z_method == "gradient" or cfg.control_variate
    dPhi = basis.gradients(X) if need_grad else None
    sig = model.diffusion(X) if need_grad else None
    # martingale part of each basis function over the step, [n, K]: the Ito
    # terms grad(phi) sigma dW + 1/2 tr(sigma^T hess(phi) sigma (dW dW^T - I dt))
    Mart = None
    if cfg.control_variate:
        Mart = np.einsum("nkd,nde,ne->nk", dPhi, sig, dW)
        quad = dW[:, :, None] * dW[:, None, :] - dt * np.eye(d)
        A = np.einsum("nai,nkab,nbj->nkij", sig, basis.hessians(X), sig)
        Mart += 0.5 * np.einsum("nkij,nij->nk", A, quad)
    zeros = np.zeros_like(X)
    psi0 = driver(X, zeros)

    c = P @ (psi0 / alpha)
    stride = max(1, n_steps // cfg.max_slices)
    times, coefs = [T], [c.copy()]
    cz = np.zeros((basis.size, d))
    clipped = 0
    # z-free drivers make the step linear in c; it applies whenever the column
    # sup-norms certify that no value of the next slice reaches the bound
    colmax = np.maximum(np.abs(Phi1).max(axis=0), np.abs(Phi).max(axis=0))
    q = 1.0 / (1.0 + alpha * dt)
    # round-off slack so a solution sitting on the bound does not count as clipped
    slack = bound * (1.0 + 1e-12)
    if not driver.uses_z:
        B = P @ (Phi1 - Mart) if Mart is not None else P @ Phi1
        g = dt * (P @ psi0)
    def jump(c, prev, k):
        """Closed-form tail of the intercept recursion, or None if not yet stationary."""
        if np.abs(c[1:] - prev[1:]).max(initial=0.0) > 1e-13 * (1.0 + np.abs(c).max()):
            return None
        # c0 <- q (G0 + c0) with G0 fixed: geometric approach to G0 / (alpha dt)
        star = (c[0] / q - prev[0]) / (alpha * dt)
        tail = c.copy()
        tail[0] = star + (c[0] - star) * q**k
        if max(colmax @ np.abs(tail), colmax @ np.abs(c)) > slack:
            return None
        for m in range(k - 1, -1, -1):
            if m % stride == 0:
                cm = c.copy()
                cm[0] = star + (c[0] - star) * q**(k - m)
                times.append(m * dt)
                coefs.append(cm)
        return tail

    for k in range(n_steps - 1, -1, -1):
        prev = c
        over = None
        if not driver.uses_z and colmax @ np.abs(c) <= slack:
            c = (B @ c + g) * q
        else:
            y1 = Phi1 @ c
            over = np.abs(y1) > slack
            if over.any():
                clipped += int(over.sum())
                np.clip(y1, -bound, bound, out=y1)
            if driver.uses_z:
                if cfg.z_method == "regression":
                    yx = np.clip(Phi @ c, -bound, bound)
                    cz = P @ ((y1 - yx)[:, None] * dW / dt)
                    Z = Phi @ cz
                else:
                    Z = np.einsum("nkd,k,nde->ne", dPhi, c, sig)
                f = driver(X, Z)
            else:
                f = psi0
            if Mart is not None:
                y1 = y1 - Mart @ c
            c = (P @ (y1 + dt * f)) * q
        if k % stride == 0:
            times.append(k * dt)
            coefs.append(c.copy())
        if cfg.accelerate and k > 0 and (over is None or not over.any()):
            tail = jump(c, prev, k)
            if tail is not None:
                c = tail
                break
    if not driver.uses_z:
        y1 = np.clip(Phi1 @ c, -bound, bound)
        cz = P @ ((y1 - np.clip(Phi @ c, -bound, bound))[:, None] * dW / dt)

    value = BasisFunction(basis, c, bound=bound)
    x_ref = reference_point(domain, d)
    lam = float(alpha * value(x_ref[None])[0])
    fit = Phi @ c
    diag = {
        "basis_id": basis.id,
        "n_steps": n_steps,
        "dt": dt,
        "truncation_bound": M * math.exp(-alpha * T) / alpha,
        "trunc_tol": trunc_tol,
        "clipped_fraction": clipped / max(1, n_steps * len(X)),
        "sample_sup_value": float(np.abs(np.clip(fit, -bound, bound)).max()),
        "n_samples": int(len(X)),
    }
    order = np.argsort(times)
    return DiscountedSolution(alpha, value, np.asarray(times)[order], np.asarray(coefs)[order],
                              cz, lam, T, x_ref, diag, model.diffusion)


def _flag(sol, x):
    return sol.value_fn.outside(x)


def evaluate_value(sol, x, with_flag=False):
    """``v^alpha(x)`` for ``x[n, d]``; ``with_flag`` also returns the extrapolation mask."""
    x = np.atleast_2d(np.asarray(x, float))
    v = sol.value_fn(x)
    return (v, _flag(sol, x)) if with_flag else v


def evaluate_z(sol, x, with_flag=False):
    """``Z(x) = grad v^alpha(x) sigma(x)`` as rows ``[n, d]``."""
    if sol.diffusion is None:
        raise ValueError("solution has no diffusion attached (load with model=...)")
    x = np.atleast_2d(np.asarray(x, float))
    z = np.einsum("nd,nde->ne", sol.value_fn.gradient(x), sol.diffusion(x))
    return (z, _flag(sol, x)) if with_flag else z


def increment_ratios(fn, pairs_x, pairs_y):
    """``|v(x) - v(y)| / ((1 + |x|^2 + |y|^2)|x - y|)`` over paired samples."""
    vx, vy = fn(pairs_x), fn(pairs_y)
    w = (1 + (pairs_x**2).sum(1) + (pairs_y**2).sum(1)) * np.linalg.norm(pairs_x - pairs_y, axis=1)
    return np.abs(vx - vy) / w
