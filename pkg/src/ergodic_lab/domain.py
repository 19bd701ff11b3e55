"""Convex sets ``G = {phi > 0}``, Euclidean projection and the penalty drift."""
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

# kernel codes for the compiled integrators
WHOLE_SPACE, BOX, BALL, HALF_SPACE, CUSTOM = 0, 1, 2, 3, -1


@dataclass(frozen=True)
class ConvexDomain:
    dim: int
    phi: Callable
    grad_phi: Callable
    project: Callable
    anchor_c: np.ndarray
    anchor_gamma: float
    kind: str = "custom"
    # (code, vec_a, vec_b, scalar) consumed by the kernels
    kernel: tuple = field(default=(CUSTOM, None, None, 0.0), compare=False)

    @property
    def bounded(self):
        return self.kind in ("box", "ball")

    def contains(self, x, atol=0.0):
        x = np.atleast_2d(x)
        return np.linalg.norm(x - self.project(x), axis=1) <= atol

    def bounds(self):
        """Axis-aligned bounding box of the closure, or None when unbounded."""
        code, a, b, r = self.kernel
        if code == BOX:
            return a.copy(), b.copy()
        if code == BALL:
            return a - r, a + r
        return None


def beta(domain, x):
    """Outward displacement ``x - Pi(x)``; zero exactly on the closure of G."""
    x = np.asarray(x, float)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    out = x2 - domain.project(x2)
    return out[0] if single else out


def penalization_drift(domain, n, x):
    """``F_n(x) = -2 n beta(x)``."""
    if n < 1:
        raise ValueError("penalization index n must be >= 1")
    return -2.0 * n * beta(domain, x)


def _box(lo, hi):
    lo = np.atleast_1d(np.asarray(lo, float))
    hi = np.atleast_1d(np.asarray(hi, float))
    if lo.shape != hi.shape or np.any(lo >= hi):
        raise ValueError("box needs lo < hi componentwise")
    dim = lo.size

    def project(x):
        return np.clip(x, lo, hi)

    def phi(x):
        return np.minimum(x - lo, hi - x).min(axis=1)

    def grad_phi(x):
        gaps = np.concatenate([x - lo, hi - x], axis=1)
        k = gaps.argmin(axis=1)
        g = np.zeros_like(x)
        rows = np.arange(x.shape[0])
        lower = k < dim
        g[rows[lower], k[lower]] = 1.0
        g[rows[~lower], k[~lower] - dim] = -1.0
        return g

    c = 0.5 * (lo + hi)
    gamma = float(0.5 * (hi - lo).min())
    return ConvexDomain(dim, phi, grad_phi, project, c, gamma, "box", (BOX, lo, hi, 0.0))


def _ball(center, radius):
    center = np.atleast_1d(np.asarray(center, float))
    radius = float(radius)
    if radius <= 0:
        raise ValueError("ball radius must be positive")
    dim = center.size

    def project(x):
        y = x - center
        r = np.linalg.norm(y, axis=1, keepdims=True)
        scale = np.where(r > radius, radius / np.maximum(r, 1e-300), 1.0)
        return center + y * scale

    def phi(x):
        r = np.linalg.norm(x - center, axis=1)
        # distance to the sphere away from the centre, C^1 quadratic cap inside r/2
        return np.where(r > radius / 2, radius - r, radius - (radius / 4 + r**2 / radius))

    def grad_phi(x):
        y = x - center
        r = np.linalg.norm(y, axis=1, keepdims=True)
        outer = -y / np.maximum(r, 1e-300)
        return np.where(r > radius / 2, outer, -2.0 * y / radius)

    return ConvexDomain(dim, phi, grad_phi, project, center, radius, "ball",
                        (BALL, center, center, radius))


def _half_space(normal, offset):
    normal = np.atleast_1d(np.asarray(normal, float))
    nn = np.linalg.norm(normal)
    if nn == 0:
        raise ValueError("half-space normal must be nonzero")
    normal = normal / nn
    offset = float(offset) / nn
    dim = normal.size

    def project(x):
        s = x @ normal - offset
        return x - np.minimum(s, 0.0)[:, None] * normal

    def phi(x):
        return x @ normal - offset

    def grad_phi(x):
        return np.broadcast_to(normal, x.shape).copy()

    # anchor one unit inside the boundary gives gamma = 1 exactly
    c = normal * (offset + 1.0)
    return ConvexDomain(dim, phi, grad_phi, project, c, 1.0, "half_space",
                        (HALF_SPACE, normal, normal, offset))


def _whole_space(dim):
    def project(x):
        return np.array(x, copy=True)

    return ConvexDomain(dim, lambda x: np.ones(x.shape[0]), np.zeros_like, project,
                        np.zeros(dim), 1.0, "whole_space",
                        (WHOLE_SPACE, np.zeros(dim), np.zeros(dim), 0.0))


def make_domain(kind, **params):
    """Build one of the closed-form domains.

    ``half_space(normal, offset)`` is ``{normal . x > offset}``, ``ball(center,
    radius)``, ``box(lo, hi)``; ``whole_space(dim)`` is the identity projection.
    ``custom`` requires ``dim, phi, grad_phi, project, anchor_c, anchor_gamma``.
    """
    if kind == "box":
        return _box(params["lo"], params["hi"])
    if kind == "ball":
        return _ball(params.get("center", [0.0]), params.get("radius", 1.0))
    if kind == "half_space":
        return _half_space(params.get("normal", [1.0]), params.get("offset", 0.0))
    if kind == "whole_space":
        return _whole_space(int(params.get("dim", 1)))
    if kind == "custom":
        gamma = float(params["anchor_gamma"])
        if gamma <= 0:
            raise ValueError("anchor_gamma must be positive")
        return ConvexDomain(int(params["dim"]), params["phi"], params["grad_phi"],
                            params["project"], np.asarray(params["anchor_c"], float), gamma)
    raise KeyError(f"unknown domain kind {kind!r}")


def boundary_points(domain, n, rng):
    """Points on the boundary of the closed-form domains."""
    code, a, b, r = domain.kernel
    if code == BALL:
        g = rng.standard_normal((n, domain.dim))
        return a + r * g / np.linalg.norm(g, axis=1, keepdims=True)
    if code == BOX:
        x = rng.uniform(a, b, size=(n, domain.dim))
        face = rng.integers(0, domain.dim, n)
        side = rng.integers(0, 2, n).astype(bool)
        rows = np.arange(n)
        x[rows, face] = np.where(side, b[face], a[face])
        return x
    if code == HALF_SPACE:
        x = rng.standard_normal((n, domain.dim)) * 5
        return x - (x @ a - r)[:, None] * a
    return np.empty((0, domain.dim))


def check_domain_invariants(domain, n_samples=4_000, seed=0, scale=3.0):
    """Sampled worst cases of the convex-projection inequalities.

    Keys ending in ``_violation`` must be <= 0 up to round-off; ``grad_norm_err``
    is the largest ``||grad phi| - 1|`` on the boundary.
    """
    rng = np.random.default_rng(seed)
    d = domain.dim
    x = domain.anchor_c + scale * rng.standard_normal((n_samples, d))
    xp = domain.anchor_c + scale * rng.standard_normal((n_samples, d))
    px, pxp = domain.project(x), domain.project(xp)
    bx, bxp = x - px, xp - pxp
    inside = pxp  # points of the closure

    def dot(u, v):
        return np.einsum("ij,ij->i", u, v)

    nb = np.linalg.norm(bx, axis=1)
    report = {
        "identity_violation": float(np.abs(domain.project(px) - px).max()),
        "idempotent_violation": float(np.abs(domain.project(px) - px).max()),
        "lipschitz_violation": float((np.linalg.norm(px - pxp, axis=1)
                                      - np.linalg.norm(x - xp, axis=1)).max()),
        "obtuse_violation": float(dot(inside - x, bx).max()),
        "monotone_violation": float((dot(xp - x, bx) - dot(bxp, bx)).max()),
        "anchor_violation": float((domain.anchor_gamma * nb - dot(x - domain.anchor_c, bx)).max()),
        "penalty_dissipative_violation": float(dot(-2 * bx + 2 * bxp, x - xp).max()),
    }
    bp = boundary_points(domain, min(n_samples, 1000), rng)
    if len(bp):
        report["grad_norm_err"] = float(np.abs(np.linalg.norm(domain.grad_phi(bp), axis=1) - 1).max())
        report["phi_boundary_err"] = float(np.abs(domain.phi(bp)).max())
    return report
