"""Simulation engines (plain, penalized, projected) and path statistics."""
import csv
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng
from .kernels import SimulationDivergence, run_penalized_gap, run_simulation

__all__ = [
    "SimConfig", "PathBundle", "SimulationDivergence", "simulate_unreflected",
    "simulate_penalized", "simulate_reflected", "penalization_gaps", "estimate_moments",
    "check_variational_inequality", "merge_bundles", "write_moment_table",
    "penalization_rate", "time_average",
]

SCHEMES = ("unreflected", "penalized", "projected")


@dataclass(frozen=True)
class SimConfig:
    dt: float
    horizon_T: float
    n_paths: int
    seed: int = 0
    scheme: str = "unreflected"
    n_penal: int = 0
    record_every: int = 1
    stiff_factor: float = 0.1

    def __post_init__(self):
        if not 0 < self.dt < self.horizon_T:
            raise ValueError("need 0 < dt < horizon_T")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")
        steps = self.horizon_T / self.dt
        if abs(steps - round(steps)) > 1e-6 * steps:
            raise ValueError("horizon_T must be an integer multiple of dt")

    @property
    def n_steps(self):
        return int(round(self.horizon_T / self.dt))

    def replace(self, **kw):
        d = dict(self.__dict__)
        d.update(kw)
        return SimConfig(**d)


@dataclass
class PathBundle:
    times: np.ndarray              # [n_rec]
    states: np.ndarray             # [n_paths, n_rec, d]
    local_time: Optional[np.ndarray]  # [n_paths, n_rec], projected scheme only
    dt: float
    record_every: int
    seed: int
    path_offset: int = 0
    scheme: str = "unreflected"
    start_step: int = 0
    _dw: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_paths(self):
        return self.states.shape[0]

    @property
    def dim(self):
        return self.states.shape[2]

    @property
    def n_steps(self):
        return (len(self.times) - 1) * self.record_every

    def keys(self):
        return rng.path_keys(self.seed, np.arange(self.path_offset, self.path_offset + self.n_paths))

    def increments(self, step):
        """Brownian increments ``[n_paths, d]`` of this bundle's step ``step``."""
        return rng.brownian_increments(self.keys(), self.start_step + step, self.dim, self.dt)

    @property
    def increments_W(self):
        """``[n_paths, n_steps, d]`` increments, regenerated from the counter stream.

        With ``record_every > 1`` the increments are summed over each recording stride.
        """
        if self._dw is None:
            keys = self.keys()
            n_rec = len(self.times) - 1
            out = np.zeros((self.n_paths, n_rec, self.dim))
            for s in range(self.n_steps):
                out[:, s // self.record_every] += rng.brownian_increments(
                    keys, self.start_step + s, self.dim, self.dt)
            self._dw = out
        return self._dw

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["path", "t"] + [f"x{j}" for j in range(self.dim)] + ["K"])
            K = self.local_time if self.local_time is not None else np.zeros(self.states.shape[:2])
            for i in range(self.n_paths):
                for k, t in enumerate(self.times):
                    w.writerow([i + self.path_offset, repr(float(t))]
                               + [repr(float(v)) for v in self.states[i, k]] + [repr(float(K[i, k]))])

    def save_npz(self, path):
        np.savez(path, times=self.times, states=self.states,
                 local_time=self.local_time if self.local_time is not None else np.empty(0),
                 meta=np.array([self.dt, self.record_every, self.path_offset, self.start_step]),
                 seed=np.array(self.seed, dtype=np.uint64),
                 scheme=np.array(self.scheme))

    @classmethod
    def load_npz(cls, path):
        f = np.load(path)
        lt = f["local_time"]
        dt, rec, off, start = f["meta"]
        return cls(f["times"], f["states"], lt if lt.size else None, float(dt), int(rec),
                   int(f["seed"]), int(off), str(f["scheme"]), int(start))


def _as_starts(x0, n_paths, dim):
    x0 = np.asarray(x0, float)
    if x0.ndim <= 1:
        return np.broadcast_to(np.atleast_1d(x0).reshape(1, dim), (n_paths, dim)).copy()
    if x0.shape != (n_paths, dim):
        raise ValueError("per-path starts must have shape (n_paths, dim)")
    return x0.copy()


def _run(model, domain, x0, cfg, pen_n, project, path_offset, backend, start_step=0):
    x0 = _as_starts(x0, cfg.n_paths, model.dim)
    keys = rng.path_keys(cfg.seed, np.arange(path_offset, path_offset + cfg.n_paths))
    states, ltime = run_simulation(model, domain, x0, keys, cfg.dt, cfg.n_steps,
                                   cfg.record_every, pen_n, project, backend, start_step)
    times = cfg.dt * (start_step + cfg.record_every * np.arange(states.shape[1]))
    scheme = "projected" if project else ("penalized" if pen_n else "unreflected")
    return PathBundle(times, states, ltime if project else None, cfg.dt, cfg.record_every,
                      cfg.seed, path_offset, scheme, start_step)


def simulate_unreflected(model, x0, cfg, path_offset=0, backend=None, start_step=0):
    """Euler-Maruyama; drifts with polynomial growth > 1 are tamed.

    ``start_step`` continues the increment stream of an earlier run, so a long
    horizon can be simulated in chunks.
    """
    return _run(model, None, x0, cfg, 0.0, False, path_offset, backend, start_step)


def simulate_penalized(model, domain, n, x0, cfg, path_offset=0, backend=None, start_step=0):
    """Euler-Maruyama with drift ``d + F_n + b``; requires ``dt <= stiff_factor / n``."""
    if n < 1:
        raise ValueError("penalization index n must be >= 1")
    if cfg.dt > cfg.stiff_factor / n * (1 + 1e-12):
        raise ValueError(f"dt={cfg.dt} too large for n={n}: need dt <= {cfg.stiff_factor / n}")
    return _run(model, domain, x0, cfg, float(n), False, path_offset, backend, start_step)


def simulate_reflected(model, domain, x0, cfg, path_offset=0, backend=None, start_step=0):
    """Projected Euler: step, project onto the closure, accumulate ``|step - projection|`` as K."""
    x0s = _as_starts(x0, cfg.n_paths, model.dim)
    if not domain.contains(x0s, atol=1e-12).all():
        raise ValueError("starting points must lie in the closure of the domain")
    return _run(model, domain, x0s, cfg, 0.0, True, path_offset, backend, start_step)


def merge_bundles(bundles):
    """Concatenate bundles simulated on consecutive path ranges."""
    bundles = sorted(bundles, key=lambda b: b.path_offset)
    first = bundles[0]
    for prev, nxt in zip(bundles, bundles[1:]):
        if nxt.path_offset != prev.path_offset + prev.n_paths:
            raise ValueError("bundles must cover consecutive path ranges")
        if nxt.seed != first.seed or nxt.dt != first.dt or nxt.record_every != first.record_every:
            raise ValueError("bundles come from different configurations")
    lt = None
    if first.local_time is not None:
        lt = np.concatenate([b.local_time for b in bundles])
    return PathBundle(first.times, np.concatenate([b.states for b in bundles]), lt, first.dt,
                      first.record_every, first.seed, first.path_offset, first.scheme,
                      first.start_step)


def time_average(model, domain, x0, cfg, fn, burn_in=0.0, chunk_steps=500, backend=None):
    """Per-path left-Riemann average of ``fn(t, X_t)`` over ``[burn_in, T)``.

    Simulates in chunks (projected scheme when ``domain`` is given) so long
    horizons never hold the full path array. ``fn`` maps ``(t, x[n, d]) -> [n]``.
    """
    x = _as_starts(x0, cfg.n_paths, model.dim)
    total = np.zeros(cfg.n_paths)
    count = 0
    first = int(round(burn_in / cfg.dt))
    done = 0
    while done < cfg.n_steps:
        m = min(chunk_steps, cfg.n_steps - done)
        sub = cfg.replace(horizon_T=m * cfg.dt * (1 + 1e-12), record_every=1) if m > 1 else None
        if sub is None:  # a single trailing step
            sub = SimConfig(cfg.dt, 2 * cfg.dt, cfg.n_paths, cfg.seed)
            m = 1
        if domain is None:
            b = simulate_unreflected(model, x, sub, backend=backend, start_step=done)
        else:
            b = simulate_reflected(model, domain, x, sub, backend=backend, start_step=done)
        for k in range(m):
            if done + k >= first:
                total += fn(b.times[k], b.states[:, k])
                count += 1
        x = b.states[:, m]
        done += m
    if count == 0:
        raise ValueError("burn_in leaves no averaging window")
    return total / count


def penalization_gaps(model, domain, ns, x0, cfg, backend=None):
    """Per-path ``sup_t |X^n_t - X_t|`` and ``sup_t |beta(X^n_t)|`` for each n.

    ``X`` is the projected scheme; all schemes share the increments of ``cfg``.
    Returns two arrays ``[n_paths, len(ns)]``.
    """
    ns = np.asarray(ns, dtype=float)
    if cfg.dt > cfg.stiff_factor / ns.max() * (1 + 1e-12):
        raise ValueError("dt too large for the largest penalization index")
    x0s = _as_starts(x0, cfg.n_paths, model.dim)
    keys = rng.path_keys(cfg.seed, np.arange(cfg.n_paths))
    return run_penalized_gap(model, domain, x0s, keys, ns, cfg.dt, cfg.n_steps, backend)



def penalization_rate(model, domain, ns, x0, horizon_T, n_paths, seed=0, p=4.0,
                      stiff_factor=0.1, backend=None):
    """``E sup_t |X^n_t - X_t|^p`` and ``E sup_t |beta(X^n_t)|^p`` against n.

    Each n runs at its own stable step ``dt = stiff_factor / n`` (rounded so the
    horizon is a whole number of steps), and the projected reference shares that
    run's increments. Returns a structured table and the log-log slope of the gap.
    """
    rows = []
    for n in ns:
        steps = int(np.ceil(horizon_T * n / stiff_factor))
        cfg = SimConfig(horizon_T / steps, horizon_T, n_paths, seed, stiff_factor=stiff_factor)
        g, b = penalization_gaps(model, domain, [n], x0, cfg, backend)
        gp, bp = g[:, 0] ** p, b[:, 0] ** p
        se = (lambda v: v.std(ddof=1) / np.sqrt(n_paths)) if n_paths > 1 else (lambda v: np.nan)
        rows.append((n, gp.mean(), se(gp), bp.mean(), se(bp)))
    table = np.array(rows, dtype=[("n", float), ("gap", float), ("gap_se", float),
                                  ("beta", float), ("beta_se", float)])
    slope = np.polyfit(np.log(table["n"]), np.log(table["gap"]), 1)[0] if len(rows) > 1 else np.nan
    return table, float(slope)

MOMENT_DTYPE = np.dtype([("t", float), ("p", float), ("estimate", float), ("stderr", float)])


def estimate_moments(bundle, powers):
    """Monte Carlo ``E|X_t|^p`` with standard errors at every stored time."""
    if bundle.n_paths < 1:
        raise ValueError("empty bundle")
    norms = np.linalg.norm(bundle.states, axis=2)
    rows = []
    for p in powers:
        with np.errstate(over="ignore", invalid="ignore"):
            vals = norms ** p
            est = vals.mean(axis=0)
            se = vals.std(axis=0, ddof=1) / np.sqrt(bundle.n_paths) if bundle.n_paths > 1 \
                else np.full(len(bundle.times), np.nan)
        if not np.all(np.isfinite(est)):
            warnings.warn(f"moment of order {p} overflowed", RuntimeWarning, stacklevel=2)
        rows.extend(zip(bundle.times, np.full(len(est), float(p)), est, se))
    return np.array(rows, dtype=MOMENT_DTYPE)


def write_moment_table(table, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "p", "estimate", "stderr"])
        for row in table:
            w.writerow([repr(float(v)) for v in row])


def check_variational_inequality(bundle, domain, z=None, evaluation="right"):
    """Max over paths of the discrete Stieltjes sum ``sum (X - z, d eta)``.

    ``d eta = grad phi(X) dK`` is the projection push of each step. With
    ``evaluation="right"`` X is taken after the push (where the measure charges),
    which makes every term nonpositive; ``"left"`` uses the state before the step
    and carries an O(dt) defect. ``z`` is a point of the closure, a callable
    ``t -> [n, d]``, or an array ``[n_paths, n_rec, d]``; default is the anchor.
    """
    if bundle.local_time is None:
        raise ValueError("bundle has no local-time channel")
    if bundle.record_every != 1:
        raise ValueError("variational check needs every step recorded")
    X = bundle.states
    n, n_rec, d = X.shape
    if z is None:
        z = domain.anchor_c
    if callable(z):
        zz = np.stack([z(t) for t in bundle.times], axis=1)
    else:
        zz = np.asarray(z, float)
        zz = np.broadcast_to(zz if zz.ndim == 3 else zz.reshape(1, 1, d), X.shape)
    dk = np.diff(bundle.local_time, axis=1)
    total = np.zeros(n)
    for k in range(n_rec - 1):
        active = dk[:, k] > 0
        if not active.any():
            continue
        xr = X[active, k + 1]
        # d eta = grad phi(X) dK, the inward unit normal at the projected point
        push = domain.grad_phi(xr) * dk[active, k][:, None]
        xe = xr if evaluation == "right" else X[active, k]
        ze = zz[active, k + 1] if evaluation == "right" else zz[active, k]
        total[active] += np.einsum("ij,ij->i", xe - ze, push)
    return float(total.max())
