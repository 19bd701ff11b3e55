"""Problem data and sampled checks of the standing hypotheses.

All callables are vectorised over a leading batch axis:

* drifts map ``x[n, d] -> [n, d]``
* the diffusion maps ``x[n, d] -> [n, d, d]``
* a driver maps ``(x[n, d], z[n, d]) -> [n]``
* control cost ``L(x[n, d], u[n, m]) -> [n]``, control drift ``R(u[n, m]) -> [n, d]``

Models built from the catalog also carry a ``family`` tuple that the compiled
simulation kernels understand; models without one always use the numpy path.
"""
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np


class HypothesisError(ValueError):
    pass


class SingularDiffusionError(HypothesisError):
    def __init__(self, point):
        self.point = np.asarray(point)
        super().__init__(f"diffusion matrix is singular at x={self.point.tolist()}")


# drift family understood by the kernels, componentwise:
#   d(x) = -a1*x - a3*x**3
#   b(x) = bs*sin(x) + bc*cos(x) + b0
#   sigma = s*I (sig_kind 0) or diag(piecewise(x_j)) (sig_kind 1)
class DriftFamily(NamedTuple):
    a1: float = 1.0
    a3: float = 0.0
    bs: float = 0.0
    bc: float = 0.0
    b0: float = 0.0
    sig_kind: int = 0
    s: float = 1.0

    def as_array(self):
        return np.array(self, dtype=np.float64)


@dataclass(frozen=True)
class ModelSpec:
    dim: int
    dissipative_drift: Callable
    bounded_drift: Callable
    diffusion: Callable
    eta: float
    b_bound: float
    sigma_bound: float
    Lambda: float = 0.0
    hyp_lambda: float = 1.0
    poly_growth_nu: float = 1.0
    name: str = "custom"
    family: Optional[DriftFamily] = field(default=None, compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be positive")
        # eta == 0 is tolerated for bounded-domain test models (reflected BM);
        # check_dissipativity reports them as failing.
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.sigma_bound <= 0:
            raise ValueError("sigma_bound must be positive")
        if self.hyp_lambda <= 0:
            raise ValueError("hyp_lambda must be positive")

    def drift(self, x):
        return self.dissipative_drift(x) + self.bounded_drift(x)

    @property
    def superlinear(self):
        return self.poly_growth_nu > 1

    def with_extra_drift(self, extra, name=None):
        """Model with ``extra`` added to the dissipative part (e.g. ``F_n``)."""
        d = self.dissipative_drift
        return ModelSpec(
            self.dim, lambda x: d(x) + extra(x), self.bounded_drift, self.diffusion,
            self.eta, self.b_bound, self.sigma_bound, self.Lambda, self.hyp_lambda,
            self.poly_growth_nu, name or self.name + "+extra", None)


@dataclass(frozen=True)
class DriverSpec:
    psi: Callable
    M_psi: float
    name: str = "custom"
    # False lets solvers evaluate psi(x, .) once per sample instead of per step
    uses_z: bool = True

    def __call__(self, x, z):
        return self.psi(x, z)

    def shifted(self, kappa):
        psi = self.psi
        return DriverSpec(lambda x, z: psi(x, z) + kappa, self.M_psi + abs(kappa),
                          f"{self.name}+{kappa:g}", self.uses_z)


@dataclass(frozen=True)
class Box:
    lo: np.ndarray
    hi: np.ndarray
    resolution: int = 201

    def __post_init__(self):
        object.__setattr__(self, "lo", np.atleast_1d(np.asarray(self.lo, float)))
        object.__setattr__(self, "hi", np.atleast_1d(np.asarray(self.hi, float)))
        if np.any(self.lo > self.hi):
            raise ValueError("box control set needs lo <= hi")


@dataclass(frozen=True)
class ControlSpec:
    control_set: object  # array [k, m] of points, or Box
    R: Callable
    L: Callable
    M_R: float
    M_L: float
    # optional closed-form argmin (x[n, d], z[n, d]) -> u[n, m]; grid search otherwise
    minimizer: Optional[Callable] = None

    @property
    def is_finite(self):
        return not isinstance(self.control_set, Box)

    @property
    def control_dim(self):
        if self.is_finite:
            return np.atleast_2d(np.asarray(self.control_set, float)).shape[1]
        return self.control_set.lo.size


# -- samplers -----------------------------------------------------------------

def ball_points(rng, n, dim, radius):
    g = rng.standard_normal((n, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * (radius * rng.uniform(size=(n, 1)) ** (1.0 / dim))


def default_pair_sampler(dim, seed=0, radius=10.0, tail_radius=50.0, tail_fraction=0.1):
    """Pairs uniform on a ball of ``radius`` plus a share drawn on the ``tail_radius`` ball."""
    rng = np.random.default_rng(seed)

    def sample(n):
        n_tail = int(round(tail_fraction * n))
        n_core = n - n_tail
        x = np.vstack([ball_points(rng, n_core, dim, radius),
                       ball_points(rng, n_tail, dim, tail_radius)])
        y = np.vstack([ball_points(rng, n_core, dim, radius),
                       ball_points(rng, n_tail, dim, tail_radius)])
        return x, y

    return sample


# -- hypothesis checks --------------------------------------------------------

@dataclass
class DissipativityReport:
    passed: bool
    worst_ratio: float
    n_used: int


def check_dissipativity(spec, sampler=None, n_pairs=10_000, tol=1e-6, drift=None):
    """Sampled check of ``(d(x)-d(y), x-y) <= -eta |x-y|^2``.

    ``drift`` overrides ``spec.dissipative_drift`` (used to test ``d + F_n``).
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    sampler = sampler or default_pair_sampler(spec.dim)
    drift = drift or spec.dissipative_drift
    x, y = sampler(n_pairs)
    diff = x - y
    sq = np.einsum("ij,ij->i", diff, diff)
    keep = sq > 0
    if not keep.any():
        raise HypothesisError("empty sample: every pair was coincident")
    x, y, diff, sq = x[keep], y[keep], diff[keep], sq[keep]
    ratio = np.einsum("ij,ij->i", drift(x) - drift(y), diff) / sq
    worst = float(ratio.max())
    return DissipativityReport(worst <= -spec.eta + tol * max(1.0, spec.eta), worst, int(keep.sum()))


@dataclass
class SigmaReport:
    Lambda_est: float
    inv_norm_sq: float
    condition_value: float
    passed: bool


def check_sigma_structure(spec, sampler=None, n_pairs=10_000, hyp_lambda=None):
    r"""Estimate ``Lambda`` and evaluate ``2(l - l^2 Lambda^2) - |||sigma^{-1}|||^2``.

    ``Lambda`` is the sampled sup of ``|y^T (sigma(x+y) - sigma(x))| / |y|`` and
    the inverse norm is the sampled sup of ``1 / s_min(sigma(x))``.
    """
    sampler = sampler or default_pair_sampler(spec.dim)
    lam = spec.hyp_lambda if hyp_lambda is None else hyp_lambda
    x, y = sampler(n_pairs)
    ny = np.linalg.norm(y, axis=1)
    keep = ny > 0
    x, y, ny = x[keep], y[keep], ny[keep]
    dsig = spec.diffusion(x + y) - spec.diffusion(x)
    proj = np.einsum("ni,nij->nj", y, dsig)
    Lambda_est = float((np.linalg.norm(proj, axis=1) / ny).max()) if len(ny) else 0.0

    pts = np.vstack([x, x + y])
    sv = np.linalg.svd(spec.diffusion(pts), compute_uv=False)
    smin, smax = sv[:, -1], sv[:, 0]
    bad = smin <= 1e-14 * np.maximum(smax, 1.0)
    if bad.any():
        raise SingularDiffusionError(pts[np.argmax(bad)])
    inv_sq = float((1.0 / smin).max() ** 2)
    cond = 2.0 * (lam - lam**2 * Lambda_est**2) - inv_sq
    return SigmaReport(Lambda_est, inv_sq, cond, cond > 0)


@dataclass
class DriverReport:
    passed: bool
    worst_violation: float
    worst_lipschitz: float
    worst_bound: float


def check_driver(driver, dim, sampler=None, n_samples=10_000, tol=1e-2, seed=0, z_scale=3.0):
    """Sampled sup of ``|psi(x,z)-psi(x,z')|/|z-z'|`` and of ``|psi(x,0)|``."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    if sampler is None:
        x = ball_points(rng, n_samples, dim, 10.0)
    else:
        x = sampler(n_samples)[0]
    z = z_scale * rng.standard_normal((n_samples, dim))
    # half the z' near z so local slopes are probed too
    dz = rng.standard_normal((n_samples, dim))
    dz[: n_samples // 2] *= 1e-3
    zp = z + dz
    dist = np.linalg.norm(z - zp, axis=1)
    keep = dist > 0
    lip = np.abs(driver(x, z) - driver(x, zp))[keep] / dist[keep]
    bound = np.abs(driver(x, np.zeros_like(z)))
    worst_lip = float(lip.max()) if lip.size else 0.0
    worst_bound = float(bound.max())
    limit = driver.M_psi * (1 + tol)
    return DriverReport(worst_lip <= limit and worst_bound <= limit,
                        max(worst_lip, worst_bound), worst_lip, worst_bound)


def check_control(ctrl, dim, n_samples=2_000, seed=0, tol=1e-2):
    """Sampled bounds ``|R| <= M_R`` and ``|L| <= M_L``."""
    rng = np.random.default_rng(seed)
    u = sample_controls(ctrl, n_samples, rng)
    x = ball_points(rng, n_samples, dim, 10.0)
    r = float(np.linalg.norm(ctrl.R(u), axis=1).max())
    lv = float(np.abs(ctrl.L(x, u)).max())
    return r <= ctrl.M_R * (1 + tol) and lv <= ctrl.M_L * (1 + tol)


def sample_controls(ctrl, n, rng):
    if ctrl.is_finite:
        pts = np.atleast_2d(np.asarray(ctrl.control_set, float))
        return pts[rng.integers(0, len(pts), n)]
    box = ctrl.control_set
    return box.lo + (box.hi - box.lo) * rng.uniform(size=(n, box.lo.size))


# -- catalog primitives -------------------------------------------------------

def paper_sigma_1d(x):
    """Piecewise-linear scalar diffusion: 10 on x<=0, 10 + x/10 on (0,1), 10.1 on x>=1."""
    return np.where(x <= 0, 10.0, np.where(x < 1, 10.0 + x / 10.0, 101.0 / 10.0))


def family_model(dim=1, fam=DriftFamily(), name="family", eta=None, b_bound=None,
                 sigma_bound=None, Lambda=None, hyp_lambda=1.0):
    """Build a ModelSpec (with kernel descriptor) from the drift family."""
    a1, a3, bs, bc, b0, sig_kind, s = fam

    def d(x):
        return -a1 * x - a3 * x**3

    def b(x):
        return bs * np.sin(x) + bc * np.cos(x) + b0

    if int(sig_kind) == 0:
        eye = np.eye(dim)

        def sigma(x):
            return np.broadcast_to(s * eye, (x.shape[0], dim, dim)).copy()

        sb = max(abs(s), 1.0 / abs(s)) if s != 0 else 1.0
        lam_default = 0.0
    else:
        def sigma(x):
            out = np.zeros((x.shape[0], dim, dim))
            idx = np.arange(dim)
            out[:, idx, idx] = paper_sigma_1d(x)
            return out

        sb = 101.0 / 10.0
        lam_default = 0.1

    return ModelSpec(
        dim=dim, dissipative_drift=d, bounded_drift=b, diffusion=sigma,
        eta=a1 if eta is None else eta,
        b_bound=(abs(bs) + abs(bc) + abs(b0)) if b_bound is None else b_bound,
        sigma_bound=sb if sigma_bound is None else sigma_bound,
        Lambda=lam_default if Lambda is None else Lambda,
        hyp_lambda=hyp_lambda,
        poly_growth_nu=3.0 if a3 != 0 else 1.0,
        name=name, family=DriftFamily(*fam))


MODEL_PRESETS = {
    "linear": dict(fam=DriftFamily(a1=1.0)),
    "reflected_ou": dict(fam=DriftFamily(a1=1.0)),
    "cubic_sin": dict(fam=DriftFamily(a1=1.0, a3=1.0, bs=1.0)),
    "cubic_cos2": dict(fam=DriftFamily(a1=1.0, a3=1.0, bc=2.0)),
    "drifted_halfline": dict(fam=DriftFamily(a1=1.0, b0=1.0)),
    "brownian": dict(fam=DriftFamily(a1=0.0), eta=0.0),
    "paper_sigma": dict(fam=DriftFamily(a1=1.0, sig_kind=1), hyp_lambda=1.0),
}


def make_model(preset="linear", dim=1, **params):
    """Catalog lookup; ``params`` override family fields (a1, a3, bs, bc, b0, s)."""
    if preset == "custom":
        base = dict(fam=DriftFamily())
    elif preset in MODEL_PRESETS:
        base = dict(MODEL_PRESETS[preset])
    else:
        raise KeyError(f"unknown model preset {preset!r}")
    fam = base.pop("fam")._asdict()
    for key in list(params):
        if key in fam:
            fam[key] = float(params.pop(key))
    fam["sig_kind"] = int(fam["sig_kind"])
    base.update(params)
    return family_model(dim=dim, fam=DriftFamily(**fam), name=preset, **base)


def constant_driver(c):
    return DriverSpec(lambda x, z: np.full(x.shape[0], float(c)), abs(float(c)), f"constant({c:g})",
                      uses_z=False)


def cosine_driver(scale=1.0, z_weight=0.0):
    """``psi(x, z) = scale*cos(x_1) - z_weight*|z|``."""
    def psi(x, z):
        out = scale * np.cos(x[:, 0])
        if z_weight:
            out = out - z_weight * np.linalg.norm(z, axis=1)
        return out

    name = f"cosine({scale:g})" if not z_weight else f"cosine({scale:g})-{z_weight:g}|z|"
    return DriverSpec(psi, max(abs(scale), abs(z_weight)), name, uses_z=bool(z_weight))


def sine_z_driver():
    return DriverSpec(lambda x, z: np.sin(z).sum(axis=1), 1.0, "sin(z)")


def linear_z_driver(slope):
    return DriverSpec(lambda x, z: slope * z.sum(axis=1), abs(slope), f"{slope:g}z")


DRIVER_PRESETS = {
    "constant": lambda c=1.0: constant_driver(c),
    "cosine": lambda scale=1.0: cosine_driver(scale),
    "cosine_absz": lambda scale=1.0, z_weight=0.3: cosine_driver(scale, z_weight),
    "sine_z": lambda: sine_z_driver(),
}


def make_driver(preset="cosine", **params):
    if preset not in DRIVER_PRESETS:
        raise KeyError(f"unknown driver preset {preset!r}")
    return DRIVER_PRESETS[preset](**params)
