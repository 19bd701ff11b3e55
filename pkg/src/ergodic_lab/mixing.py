"""Exponential decay of ``|P_t Phi(x) - P_t Phi(y)|`` under synchronous coupling.

Both ensembles are driven by the same counter-based increments, so the gap
estimate is a paired mean with small variance.
"""
import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .sde import simulate_reflected, simulate_unreflected


def _tanh_linear(x):
    return np.tanh(x.sum(axis=1) / np.sqrt(x.shape[1]))


def _smooth_bump(x):
    # off-centre so that no symmetry of the pair (x, -x) cancels the slowest mode
    y = x - 0.5 / np.sqrt(x.shape[1])
    return 1.0 / (1.0 + np.exp(4.0 * (np.einsum("ij,ij->i", y, y) - 1.0)))


def _sine(x):
    return np.sin(x[:, 0])


def _cosine_shift(x):
    return np.cos(x[:, 0] + 0.5)


# every entry has sup-norm at most 1
DEFAULT_BATTERY = {
    "tanh": (_tanh_linear, 1.0),
    "bump": (_smooth_bump, 1.0),
    "sin": (_sine, 1.0),
    "cos_shift": (_cosine_shift, 1.0),
}


@dataclass
class MixingReport:
    test_function_id: str
    x: np.ndarray
    y: np.ndarray
    times: np.ndarray
    gap: np.ndarray
    stderr: np.ndarray
    fitted_rate_mu: float = float("nan")
    mu_ci: tuple = (float("nan"), float("nan"))
    log_prefactor: float = float("nan")
    fit_window: tuple = (float("nan"), float("nan"))
    sup_norm: float = 1.0
    inconclusive: bool = False
    notes: list = field(default_factory=list)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "gap", "stderr"])
            for row in zip(self.times, self.gap, self.stderr):
                w.writerow([repr(float(v)) for v in row])

    def summary(self):
        return {
            "test_function": self.test_function_id,
            "x": np.asarray(self.x).tolist(), "y": np.asarray(self.y).tolist(),
            "mu": self.fitted_rate_mu, "mu_ci": list(self.mu_ci),
            "log_C": self.log_prefactor, "fit_window": list(self.fit_window),
            "inconclusive": self.inconclusive,
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh)


def fit_decay(times, gap, stderr, min_snr=5.0, t_min=0.0, confidence=0.95):
    """Least squares of ``log gap = log C - mu t`` where ``gap > min_snr * stderr``.

    The window starts at ``t_min`` and ends before the first point whose signal
    drops under the threshold. Returns ``(mu, (lo, hi), log_C, (t0, t1))`` or
    None when fewer than three points qualify.
    """
    ok = (times >= t_min) & (gap > min_snr * stderr) & (gap > 0)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return None
    # contiguous run from the first admissible time
    run = [idx[0]]
    for i in idx[1:]:
        if i != run[-1] + 1:
            break
        run.append(i)
    run = np.array(run)
    if run.size < 3:
        return None
    t, lg = times[run], np.log(gap[run])
    res = stats.linregress(t, lg)
    q = stats.t.ppf(0.5 + confidence / 2, run.size - 2)
    mu = -res.slope
    half = q * res.stderr
    return mu, (mu - half, mu + half), res.intercept, (float(t[0]), float(t[-1]))


def estimate_semigroup_gap(model, x, y, test_functions=None, cfg=None, domain=None,
                           min_snr=5.0, t_min=None, backend=None):
    """Gap curves and fitted rates for each test function.

    ``test_functions`` maps an id to ``(Phi, sup_norm)`` or to a bare callable
    (sup-norm then estimated on the simulated states). Returns a list of
    MixingReport, one per function. Without a domain the plain scheme is used.
    """
    x = np.atleast_1d(np.asarray(x, float))
    y = np.atleast_1d(np.asarray(y, float))
    battery = DEFAULT_BATTERY if test_functions is None else test_functions
    if domain is None:
        bx = simulate_unreflected(model, x, cfg, backend=backend)
        by = simulate_unreflected(model, y, cfg, backend=backend)
    else:
        bx = simulate_reflected(model, domain, x, cfg, backend=backend)
        by = simulate_reflected(model, domain, y, cfg, backend=backend)
    n_paths, n_rec, d = bx.states.shape
    t_min = bx.times[-1] / 10 if t_min is None else t_min
    reports = []
    for name, entry in battery.items():
        phi, sup = entry if isinstance(entry, tuple) else (entry, None)
        fx = phi(bx.states.reshape(-1, d)).reshape(n_paths, n_rec)
        fy = phi(by.states.reshape(-1, d)).reshape(n_paths, n_rec)
        if sup is None:
            sup = float(max(np.abs(fx).max(), np.abs(fy).max()))
        if max(np.abs(fx).max(), np.abs(fy).max()) > sup * (1 + 1e-9):
            raise ValueError(f"test function {name!r} exceeds its declared bound")
        diff = fx - fy
        gap = np.abs(diff.mean(axis=0))
        se = diff.std(axis=0, ddof=1) / np.sqrt(n_paths) if n_paths > 1 else np.zeros(n_rec)
        rep = MixingReport(name, x, y, bx.times, gap, se, sup_norm=sup)
        fit = fit_decay(bx.times, gap, se, min_snr, t_min)
        if fit is None:
            rep.inconclusive = True
            rep.notes.append("gap indistinguishable from noise on the fit window")
        else:
            rep.fitted_rate_mu, rep.mu_ci, rep.log_prefactor, rep.fit_window = fit
        reports.append(rep)
    return reports


def fit_prefactor(reports, mu):
    """Smallest C with ``gap(t) <= C (1+|x|^2+|y|^2) |Phi|_0 exp(-mu t)`` on every report."""
    c = 0.0
    for r in reports:
        w = (1 + r.x @ r.x + r.y @ r.y) * r.sup_norm
        c = max(c, float(np.max(r.gap * np.exp(mu * r.times) / w)))
    return c


def prefactor_violation(reports, mu, C):
    """Largest ratio of observed gap to the bound; <= 1 means the bound holds."""
    worst = 0.0
    for r in reports:
        w = (1 + r.x @ r.x + r.y @ r.y) * r.sup_norm
        worst = max(worst, float(np.max(r.gap / (C * w * np.exp(-mu * r.times)))))
    return worst
