"""Regression bases on an axis-aligned box and functions expanded in them.

``legendre``: tensor Legendre polynomials of total degree <= ``degree`` in the
coordinates rescaled to [-1, 1].
``cosine``: tensor ``cos(k pi (x - lo)/(hi - lo))`` of total order <= ``degree``;
every member has zero normal derivative on the faces of the box, which suits
reflected problems.
``legendre+cosine``: the union (the constant is kept once).
"""
import itertools
import warnings

import numpy as np
from numpy.polynomial import legendre as npleg

KINDS = ("legendre", "cosine", "legendre+cosine")


class ExtrapolationWarning(UserWarning):
    pass


def _multi_indices(dim, degree):
    out = [m for m in itertools.product(range(degree + 1), repeat=dim) if sum(m) <= degree]
    return sorted(out, key=lambda m: (sum(m), tuple(-v for v in m)))


class Basis:
    def __init__(self, lo, hi, degree=4, kind="legendre"):
        self.lo = np.atleast_1d(np.asarray(lo, float))
        self.hi = np.atleast_1d(np.asarray(hi, float))
        if self.lo.shape != self.hi.shape or np.any(self.hi <= self.lo):
            raise ValueError("basis region needs lo < hi")
        if kind not in KINDS:
            raise ValueError(f"basis kind must be one of {KINDS}")
        if degree < 0:
            raise ValueError("degree must be nonnegative")
        self.degree = int(degree)
        self.kind = kind
        self.dim = self.lo.size
        idx = _multi_indices(self.dim, self.degree)
        terms = []
        if kind in ("legendre", "legendre+cosine"):
            terms += [("P", m) for m in idx]
        if kind in ("cosine", "legendre+cosine"):
            terms += [("C", m) for m in idx if not (kind == "legendre+cosine" and sum(m) == 0)]
        self.terms = terms
        # derivative map of the 1D Legendre family, column k = d/du P_k
        eye = np.eye(self.degree + 1)
        self._dleg = np.zeros((self.degree + 1, self.degree + 1))
        for k in range(1, self.degree + 1):
            dk = npleg.legder(eye[k])
            self._dleg[: dk.size, k] = dk

    @property
    def id(self):
        return f"{self.kind}:deg{self.degree}:dim{self.dim}"

    @property
    def size(self):
        return len(self.terms)

    def __repr__(self):
        return f"Basis({self.id}, lo={self.lo.tolist()}, hi={self.hi.tolist()})"

    def _u(self, x):
        return 2.0 * (x - self.lo) / (self.hi - self.lo) - 1.0

    def _tables(self, x, deriv, second=False):
        """1D factor tables ``[n, d, degree+1]`` for both families (and their derivatives)."""
        x = np.atleast_2d(np.asarray(x, float))
        u = self._u(x)
        width = self.hi - self.lo
        P = npleg.legvander(u, self.degree)
        k = np.arange(self.degree + 1)
        theta = np.pi * (x - self.lo) / width
        C = np.cos(theta[..., None] * k)
        if not deriv:
            return P, C, None, None
        dP = (P @ self._dleg) * (2.0 / width)[None, :, None]
        dC = -np.sin(theta[..., None] * k) * k * (np.pi / width)[None, :, None]
        if not second:
            return P, C, dP, dC
        d2P = (P @ self._dleg @ self._dleg) * (2.0 / width)[None, :, None] ** 2
        d2C = -C * k**2 * (np.pi / width)[None, :, None] ** 2
        return P, C, dP, dC, d2P, d2C

    def values(self, x):
        """Design matrix ``[n, size]``."""
        P, C, _, _ = self._tables(x, False)
        n = P.shape[0]
        out = np.empty((n, self.size))
        dims = np.arange(self.dim)
        for c, (fam, m) in enumerate(self.terms):
            T = P if fam == "P" else C
            out[:, c] = T[:, dims, list(m)].prod(axis=1)
        return out

    def gradients(self, x):
        """Gradient tensor ``[n, size, d]``."""
        P, C, dP, dC = self._tables(x, True)
        n = P.shape[0]
        out = np.empty((n, self.size, self.dim))
        dims = np.arange(self.dim)
        for c, (fam, m) in enumerate(self.terms):
            T, dT = (P, dP) if fam == "P" else (C, dC)
            vals = T[:, dims, list(m)]
            ders = dT[:, dims, list(m)]
            for j in range(self.dim):
                f = vals.copy()
                f[:, j] = ders[:, j]
                out[:, c, j] = f.prod(axis=1)
        return out

    def hessians(self, x):
        """Hessian tensor ``[n, size, d, d]``."""
        P, C, dP, dC, d2P, d2C = self._tables(x, True, True)
        n = P.shape[0]
        out = np.empty((n, self.size, self.dim, self.dim))
        dims = np.arange(self.dim)
        for c, (fam, m) in enumerate(self.terms):
            T, dT, d2T = (P, dP, d2P) if fam == "P" else (C, dC, d2C)
            vals = T[:, dims, list(m)]
            ders = dT[:, dims, list(m)]
            sec = d2T[:, dims, list(m)]
            for i in range(self.dim):
                for j in range(i, self.dim):
                    f = vals.copy()
                    if i == j:
                        f[:, i] = sec[:, i]
                    else:
                        f[:, i] = ders[:, i]
                        f[:, j] = ders[:, j]
                    out[:, c, i, j] = out[:, c, j, i] = f.prod(axis=1)
        return out

    def inside(self, x, atol=1e-12):
        x = np.atleast_2d(x)
        return np.all((x >= self.lo - atol) & (x <= self.hi + atol), axis=1)

    def to_dict(self):
        return {"kind": self.kind, "degree": self.degree, "lo": self.lo.tolist(),
                "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["lo"], d["hi"], d["degree"], d["kind"])


class BasisFunction:
    """``x -> clip(Phi(x) @ coef - shift, -bound, bound)`` with analytic gradient.

    ``bound=None`` disables clipping. Points outside the basis region raise an
    ExtrapolationWarning (the values are still returned).
    """

    def __init__(self, basis, coef, shift=0.0, bound=None):
        self.basis = basis
        self.coef = np.asarray(coef, float)
        self.shift = float(shift)
        self.bound = bound

    def outside(self, x):
        return ~self.basis.inside(x)

    def _warn(self, x):
        out = self.outside(x)
        if out.any():
            warnings.warn(f"{int(out.sum())} evaluation point(s) outside the regression region "
                          f"{self.basis.lo.tolist()}..{self.basis.hi.tolist()}",
                          ExtrapolationWarning, stacklevel=3)
        return out

    def __call__(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        self._warn(x)
        v = self.basis.values(x) @ self.coef - self.shift
        if self.bound is not None:
            v = np.clip(v, -self.bound, self.bound)
        return v

    def gradient(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        self._warn(x)
        return np.einsum("nkd,k->nd", self.basis.gradients(x), self.coef)

    def shifted(self, delta):
        return BasisFunction(self.basis, self.coef, self.shift + delta, self.bound)

    def to_dict(self):
        return {"basis": self.basis.to_dict(), "coef": self.coef.tolist(), "shift": self.shift,
                "bound": self.bound}

    @classmethod
    def from_dict(cls, d):
        return cls(Basis.from_dict(d["basis"]), d["coef"], d["shift"], d["bound"])


def ridge_projector(Phi, ridge=1e-8, free=(0,)):
    """``(Phi^T Phi + ridge * tr/K * D)^{-1} Phi^T``; raises on numerical rank loss.

    ``D`` is the identity except on the ``free`` columns (the intercept by
    default), which are not shrunk, so constants are reproduced exactly.
    """
    n, K = Phi.shape
    if n < K or np.linalg.matrix_rank(Phi) < K:
        raise np.linalg.LinAlgError(f"design matrix has rank below {K}")
    G = Phi.T @ Phi
    pen = np.full(K, ridge * np.trace(G) / K)
    pen[list(free)] = 0.0
    G[np.diag_indices(K)] += pen
    return np.linalg.solve(G, Phi.T)
