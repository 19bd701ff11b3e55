"""Time-stepping kernels.

Two interchangeable backends:

* ``*_nb`` -- numba loops over paths for catalog models (``ModelSpec.family``)
  on closed-form domains; drift, projection and the counter RNG are fused.
* ``*_np`` -- numpy loop over time, vectorised over paths, calling the model's
  own callables. Works for every model and is the reference path.

Both consume the same counter-based increments, so they agree to round-off.
"""
import math

import numpy as np

from . import rng
from ._accel import njit, numba_enabled
from .domain import BALL, BOX, HALF_SPACE, WHOLE_SPACE


class SimulationDivergence(FloatingPointError):
    def __init__(self, path, step):
        self.path, self.step = int(path), int(step)
        super().__init__(f"non-finite state on path {self.path} at step {self.step}")


# -- compiled -----------------------------------------------------------------

@njit(inline="always")
def _sigma_pw(x):
    if x <= 0.0:
        return 10.0
    if x < 1.0:
        return 10.0 + x / 10.0
    return 10.1


@njit(inline="always")
def _drift_comp(fam, xj):
    v = -fam[0] * xj + fam[4]
    if fam[1] != 0.0:
        v -= fam[1] * xj * xj * xj
    if fam[2] != 0.0:
        v += fam[2] * math.sin(xj)
    if fam[3] != 0.0:
        v += fam[3] * math.cos(xj)
    return v


@njit(inline="always")
def _sig_comp(fam, xj):
    if fam[5] == 0.0:
        return fam[6]
    return _sigma_pw(xj)


@njit(inline="always")
def _project_inplace(y, code, a, b, r):
    d = y.shape[0]
    if code == 1:
        for j in range(d):
            if y[j] < a[j]:
                y[j] = a[j]
            elif y[j] > b[j]:
                y[j] = b[j]
    elif code == 2:
        s = 0.0
        for j in range(d):
            s += (y[j] - a[j]) ** 2
        s = math.sqrt(s)
        if s > r:
            f = r / s
            for j in range(d):
                y[j] = a[j] + (y[j] - a[j]) * f
    elif code == 3:
        s = -r
        for j in range(d):
            s += y[j] * a[j]
        if s < 0.0:
            for j in range(d):
                y[j] -= s * a[j]


@njit
def simulate_nb(x0, fam, code, a, b, r, pen_n, project, tamed, dt, n_steps, record_every,
                keys, states, ltime, start_step):
    n, d = x0.shape
    sq = math.sqrt(dt)
    x = np.empty(d)
    xt = np.empty(d)
    tmp = np.empty(d)
    for i in range(n):
        key = keys[i]
        for j in range(d):
            x[j] = x0[i, j]
            states[i, 0, j] = x[j]
        k_acc = 0.0
        ltime[i, 0] = 0.0
        for s in range(n_steps):
            # the step body is written out here and in penalized_gap_nb, and
            # boxes are clipped in place: helpers taking the work arrays run ~2x slower
            fn = 0.0
            for j in range(d):
                tmp[j] = _drift_comp(fam, x[j])
                fn += tmp[j] * tmp[j]
            scale = dt / (1.0 + dt * math.sqrt(fn)) if tamed else dt
            for j in range(d):
                xt[j] = x[j] + scale * tmp[j] + _sig_comp(fam, x[j]) * sq * rng.normal_nb(key, (start_step + s) * d + j)
            if pen_n > 0.0:
                for j in range(d):
                    tmp[j] = x[j]
                if code == 1:
                    for jj in range(d):
                        tmp[jj] = min(max(tmp[jj], a[jj]), b[jj])
                else:
                    _project_inplace(tmp, code, a, b, r)
                for j in range(d):
                    xt[j] -= 2.0 * pen_n * (x[j] - tmp[j]) * dt
            for j in range(d):
                x[j] = xt[j]
            if project:
                if code == 1:
                    for jj in range(d):
                        x[jj] = min(max(x[jj], a[jj]), b[jj])
                else:
                    _project_inplace(x, code, a, b, r)
                dk = 0.0
                for j in range(d):
                    dk += (xt[j] - x[j]) ** 2
                k_acc += math.sqrt(dk)
            for j in range(d):
                if not math.isfinite(x[j]):
                    return i, s
            if (s + 1) % record_every == 0:
                rec = (s + 1) // record_every
                for j in range(d):
                    states[i, rec, j] = x[j]
                ltime[i, rec] = k_acc
    return -1, -1


@njit
def penalized_gap_nb(x0, fam, code, a, b, r, ns, tamed, dt, n_steps, keys, sup_gap, sup_beta):
    n, d = x0.shape
    m = ns.shape[0]
    sq = math.sqrt(dt)
    x = np.empty(d)
    dw = np.empty(d)
    tmp = np.empty(d)
    xn = np.empty((m, d))
    yt = np.empty(d)
    for i in range(n):
        key = keys[i]
        for j in range(d):
            x[j] = x0[i, j]
        for q in range(m):
            for j in range(d):
                xn[q, j] = x0[i, j]
            sup_gap[i, q] = 0.0
            sup_beta[i, q] = 0.0
        for s in range(n_steps):
            for j in range(d):
                dw[j] = sq * rng.normal_nb(key, s * d + j)
            # reference: projected scheme
            fn = 0.0
            for j in range(d):
                tmp[j] = _drift_comp(fam, x[j])
                fn += tmp[j] * tmp[j]
            scale = dt / (1.0 + dt * math.sqrt(fn)) if tamed else dt
            for j in range(d):
                x[j] = x[j] + scale * tmp[j] + _sig_comp(fam, x[j]) * dw[j]
            if code == 1:
                for jj in range(d):
                    x[jj] = min(max(x[jj], a[jj]), b[jj])
            else:
                _project_inplace(x, code, a, b, r)
            for q in range(m):
                fn = 0.0
                for j in range(d):
                    tmp[j] = _drift_comp(fam, xn[q, j])
                    fn += tmp[j] * tmp[j]
                scale = dt / (1.0 + dt * math.sqrt(fn)) if tamed else dt
                for j in range(d):
                    yt[j] = xn[q, j] + scale * tmp[j] + _sig_comp(fam, xn[q, j]) * dw[j]
                    tmp[j] = xn[q, j]
                if code == 1:
                    for jj in range(d):
                        tmp[jj] = min(max(tmp[jj], a[jj]), b[jj])
                else:
                    _project_inplace(tmp, code, a, b, r)
                g = 0.0
                for j in range(d):
                    xn[q, j] = yt[j] - 2.0 * ns[q] * (xn[q, j] - tmp[j]) * dt
                    tmp[j] = xn[q, j]
                    g += (xn[q, j] - x[j]) ** 2
                if code == 1:
                    for jj in range(d):
                        tmp[jj] = min(max(tmp[jj], a[jj]), b[jj])
                else:
                    _project_inplace(tmp, code, a, b, r)
                bb = 0.0
                for j in range(d):
                    bb += (xn[q, j] - tmp[j]) ** 2
                # squared sups; the roots are taken once per path below
                if g > sup_gap[i, q]:
                    sup_gap[i, q] = g
                if bb > sup_beta[i, q]:
                    sup_beta[i, q] = bb
        for q in range(m):
            sup_gap[i, q] = math.sqrt(sup_gap[i, q])
            sup_beta[i, q] = math.sqrt(sup_beta[i, q])
    return 0


# -- numpy --------------------------------------------------------------------

def _drift_increment_np(model, x, dt):
    f = model.drift(x)
    if model.superlinear:
        return f * (dt / (1.0 + dt * np.linalg.norm(f, axis=1)))[:, None]
    return f * dt


def euler_step_np(model, domain, x, dw, dt, pen_n=0.0):
    xt = x + _drift_increment_np(model, x, dt) + np.einsum("nij,nj->ni", model.diffusion(x), dw)
    if pen_n > 0:
        xt = xt - 2.0 * pen_n * (x - domain.project(x)) * dt
    return xt


def simulate_np(model, domain, x0, pen_n, project, dt, n_steps, record_every, keys, states, ltime,
                start_step=0):
    n, d = x0.shape
    x = x0.copy()
    states[:, 0] = x
    ltime[:, 0] = 0.0
    k_acc = np.zeros(n)
    for s in range(n_steps):
        dw = rng.brownian_increments(keys, start_step + s, d, dt)
        xt = euler_step_np(model, domain, x, dw, dt, pen_n)
        if project:
            x = domain.project(xt)
            k_acc = k_acc + np.linalg.norm(xt - x, axis=1)
        else:
            x = xt
        bad = ~np.isfinite(x).all(axis=1)
        if bad.any():
            return int(np.argmax(bad)), s
        if (s + 1) % record_every == 0:
            rec = (s + 1) // record_every
            states[:, rec] = x
            ltime[:, rec] = k_acc
    return -1, -1


def penalized_gap_np(model, domain, x0, ns, dt, n_steps, keys, sup_gap, sup_beta):
    d = x0.shape[1]
    x = x0.copy()
    xs = [x0.copy() for _ in ns]
    sup_gap[:] = 0.0
    sup_beta[:] = 0.0
    for s in range(n_steps):
        dw = rng.brownian_increments(keys, s, d, dt)
        x = domain.project(euler_step_np(model, domain, x, dw, dt))
        for q, pen in enumerate(ns):
            xs[q] = euler_step_np(model, domain, xs[q], dw, dt, pen)
            np.maximum(sup_gap[:, q], np.linalg.norm(xs[q] - x, axis=1), out=sup_gap[:, q])
            np.maximum(sup_beta[:, q], np.linalg.norm(xs[q] - domain.project(xs[q]), axis=1),
                       out=sup_beta[:, q])
    return 0


# -- dispatch -----------------------------------------------------------------

def use_compiled(model, domain):
    if not numba_enabled() or model.family is None:
        return False
    return domain is None or domain.kernel[0] in (WHOLE_SPACE, BOX, BALL, HALF_SPACE)


def _domain_args(domain, dim):
    if domain is None:
        return WHOLE_SPACE, np.zeros(dim), np.zeros(dim), 0.0
    code, a, b, r = domain.kernel
    return code, np.asarray(a, float), np.asarray(b, float), float(r)


def run_simulation(model, domain, x0, keys, dt, n_steps, record_every, pen_n=0.0,
                   project=False, backend=None, start_step=0):
    """Integrate from ``x0[n, d]``; returns (states[n, n_rec, d], local_time[n, n_rec])."""
    n, d = x0.shape
    n_rec = n_steps // record_every + 1
    states = np.empty((n, n_rec, d))
    ltime = np.empty((n, n_rec))
    compiled = use_compiled(model, domain) if backend is None else backend == "numba"
    if compiled:
        code, a, b, r = _domain_args(domain, d)
        bad = simulate_nb(np.ascontiguousarray(x0, dtype=np.float64), model.family.as_array(),
                          code, a, b, r, float(pen_n), bool(project), model.superlinear,
                          float(dt), int(n_steps), int(record_every), keys, states, ltime,
                          int(start_step))
    else:
        from .domain import make_domain
        dom = domain if domain is not None else make_domain("whole_space", dim=d)
        bad = simulate_np(model, dom, np.asarray(x0, float), float(pen_n), bool(project),
                          float(dt), int(n_steps), int(record_every), keys, states, ltime,
                          int(start_step))
    if bad[0] >= 0:
        raise SimulationDivergence(*bad)
    return states, ltime


def run_penalized_gap(model, domain, x0, keys, ns, dt, n_steps, backend=None):
    n = x0.shape[0]
    ns = np.asarray(ns, dtype=np.float64)
    sup_gap = np.empty((n, ns.size))
    sup_beta = np.empty((n, ns.size))
    compiled = use_compiled(model, domain) if backend is None else backend == "numba"
    if compiled:
        code, a, b, r = _domain_args(domain, x0.shape[1])
        penalized_gap_nb(np.ascontiguousarray(x0, dtype=np.float64), model.family.as_array(),
                         code, a, b, r, ns, model.superlinear, float(dt), int(n_steps), keys,
                         sup_gap, sup_beta)
    else:
        penalized_gap_np(model, domain, np.asarray(x0, float), ns, float(dt), int(n_steps),
                         keys, sup_gap, sup_beta)
    return sup_gap, sup_beta
