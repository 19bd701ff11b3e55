import warnings

import numpy as np
import pytest

from ergodic_lab.bsde import BSDEConfig
from ergodic_lab.ergodic import (ErgodicSolution, LambdaConvergenceWarning,
                                 check_lambda_uniqueness, ebsde_residual, growth_certificate,
                                 neumann_transform_fixed_lambda, neumann_transform_fixed_mu,
                                 richardson, vanishing_discount)
from ergodic_lab.model import make_driver
from ergodic_lab.pde import grid_problem, solve_ergodic_pde
from ergodic_lab.sde import SimConfig, simulate_reflected

GRID = np.linspace(-1, 1, 41)[:, None]


@pytest.fixture(scope="module")
def cosine_sol(ou, unit_box):
    return vanishing_discount(ou, unit_box, make_driver("cosine"))


@pytest.fixture(scope="module")
def absz_sol(ou, unit_box):
    return vanishing_discount(ou, unit_box, make_driver("cosine_absz"))


@pytest.fixture(scope="module")
def bundle(ou, unit_box):
    x0 = np.linspace(-1, 1, 400)[:, None]
    return simulate_reflected(ou, unit_box, x0, SimConfig(1e-3, 0.5, 400, seed=2,
                                                          scheme="projected"))


@pytest.mark.parametrize("lam,c,r", [(0.8, 0.3, 1.0), (-1.2, 2.0, 0.5), (0.1, -0.05, 2.0)])
def test_richardson_recovers_power_law(lam, c, r):
    alphas = np.array([0.2, 0.1, 0.05, 0.02, 0.01])
    got, rfit, half, ok = richardson(alphas, lam + c * alphas**r)
    assert ok
    assert got == pytest.approx(lam, abs=1e-10)
    assert rfit == pytest.approx(r, abs=1e-8)
    assert half == pytest.approx(abs(c) * 0.01**r, rel=1e-6)


def test_richardson_degenerate_cases():
    assert richardson([0.1, 0.05, 0.01], [0.7, 0.7, 0.7]) == (0.7, pytest.approx(np.nan, nan_ok=True),
                                                              0.0, True)
    lam, _, half, ok = richardson([0.1, 0.05, 0.01], [0.7, 0.71, 0.705])
    assert not ok and lam == 0.705 and half == pytest.approx(0.01)


@pytest.mark.parametrize("c", [0.7, -0.4])
def test_constant_driver_exact(ou, unit_box, c):
    sol = vanishing_discount(ou, unit_box, make_driver("constant", c=c),
                             cfg=BSDEConfig(n_samples=2000))
    assert sol.lam == pytest.approx(c, abs=1e-10)
    assert all(t["lambda_alpha"] == pytest.approx(c, abs=1e-10) for t in sol.alpha_trace)
    assert np.abs(sol.vbar(GRID)).max() < 1e-12


def test_lambda_matches_pde(ou, cosine_sol):
    ref = solve_ergodic_pde(grid_problem(ou, make_driver("cosine"), -1, 1, 400))
    assert abs(cosine_sol.lam - ref.lam) <= 2e-2
    # vbar agrees with the oracle profile up to the common normalisation
    pv = np.interp(GRID[:, 0], ref.x, ref.v) - np.interp(0.0, ref.x, ref.v)
    assert np.abs(cosine_sol.vbar(GRID) - pv).max() < 2e-2


def test_solution_invariants(cosine_sol):
    assert abs(cosine_sol.lam) <= 1.0
    assert cosine_sol.vbar(cosine_sol.x_ref[None])[0] == 0.0
    lams = [t["lambda_alpha"] for t in cosine_sol.alpha_trace]
    steps = np.abs(np.diff(lams))
    assert np.all(np.diff(steps[-3:]) < 0)
    lo, hi = cosine_sol.lam_ci
    assert lo <= cosine_sol.lam <= hi


def test_shift_equivariance(ou, unit_box, cosine_sol):
    shifted = vanishing_discount(ou, unit_box, make_driver("cosine").shifted(1.5))
    assert shifted.lam - cosine_sol.lam == pytest.approx(1.5, abs=1e-6)
    assert np.abs(shifted.vbar(GRID) - cosine_sol.vbar(GRID)).max() < 1e-6


def test_schedule_validation(ou, unit_box):
    for sched in [(0.1, 0.2), (0.1, 0.1), (0.1, -0.01), ()]:
        with pytest.raises(ValueError):
            vanishing_discount(ou, unit_box, make_driver("cosine"), sched)


def test_nonmonotone_schedule_warns(ou, unit_box):
    # a schedule too short for the three-point fit on a noisy trend still returns
    with warnings.catch_warnings():
        warnings.simplefilter("error", LambdaConvergenceWarning)
        sol = vanishing_discount(ou, unit_box, make_driver("constant", c=1.0), (0.5, 0.2),
                                 cfg=BSDEConfig(n_samples=1000))
    assert sol.lam == pytest.approx(1.0)


def test_growth_certificate_scales_with_driver(ou, unit_box, cosine_sol):
    C = growth_certificate(cosine_sol.vbar, GRID)
    assert np.all(np.abs(cosine_sol.vbar(GRID)) <= C * (1 + GRID[:, 0] ** 2) + 1e-15)
    doubled = vanishing_discount(ou, unit_box, make_driver("cosine", scale=2.0))
    assert growth_certificate(doubled.vbar, GRID) == pytest.approx(2 * C, rel=1e-6)


def test_uniqueness_constant_driver(ou, unit_box):
    sol = vanishing_discount(ou, unit_box, make_driver("constant", c=0.3),
                             cfg=BSDEConfig(n_samples=1000))
    rep = check_lambda_uniqueness(ou, unit_box, make_driver("constant", c=0.3),
                                  [[-1.0], [0.2], [1.0]], SimConfig(0.01, 2.0, 50),
                                  solution=sol)
    assert np.allclose(rep.lambdas, 0.3, atol=1e-12) and rep.max_spread < 1e-12 and rep.passed


def test_uniqueness_separates_ergodicity_from_correctness(ou, unit_box, absz_sol):
    driver = make_driver("cosine_absz")
    cfg = SimConfig(0.01, 10.0, 1000, seed=3, scheme="projected")
    starts = [[-0.9], [0.0], [0.9]]
    good = check_lambda_uniqueness(ou, unit_box, driver, starts, cfg, solution=absz_sol)
    bad = check_lambda_uniqueness(ou, unit_box, driver, starts, cfg, solution=absz_sol,
                                  z_field=lambda x: np.zeros_like(x))
    assert good.passed and good.max_spread <= 0.05 * (abs(absz_sol.lam) + 0.1)
    assert bad.passed
    se = np.hypot(good.stderrs.mean(), bad.stderrs.mean())
    assert bad.lambdas.mean() - good.lambdas.mean() > 5 * se
    assert abs(good.lambdas.mean() - absz_sol.lam) < 2e-2


def test_uniqueness_argument_errors(ou, unit_box, cosine_sol):
    cfg = SimConfig(0.01, 1.0, 10)
    with pytest.raises(ValueError):
        check_lambda_uniqueness(ou, unit_box, make_driver("cosine"), [[0.0]], cfg, cosine_sol)
    with pytest.raises(ValueError):
        check_lambda_uniqueness(ou, unit_box, make_driver("cosine"), [[0.0], [1.5]], cfg,
                                cosine_sol)
    with pytest.raises(ValueError):
        check_lambda_uniqueness(ou, unit_box, make_driver("cosine"), [[0.0], [0.5]], cfg)


def test_transform_g_equals_mu(cosine_sol, bundle):
    base = cosine_sol.vbar(bundle.states.reshape(-1, 1)).reshape(bundle.states.shape[:2])
    got = neumann_transform_fixed_mu(cosine_sol, lambda x: np.full(len(x), 0.4), 0.4, bundle)
    assert np.array_equal(got, base)
    same = neumann_transform_fixed_lambda(cosine_sol, cosine_sol.lam,
                                          lambda x: np.full(len(x), 0.4), 0.4, bundle)
    assert np.array_equal(same, base)


def test_transform_unit_cost_is_local_time(cosine_sol, bundle):
    base = cosine_sol.vbar(bundle.states.reshape(-1, 1)).reshape(bundle.states.shape[:2])
    got = neumann_transform_fixed_mu(cosine_sol, lambda x: np.ones(len(x)), 0.0, bundle)
    K = bundle.local_time - bundle.local_time[:, :1]
    assert np.allclose(got - base, -K, atol=1e-13)
    untouched = K[:, -1] == 0
    assert untouched.any() and (~untouched).any()
    assert np.array_equal(got[untouched], base[untouched])


def test_transform_fixed_lambda_drift(cosine_sol, bundle):
    g = lambda x: np.cos(3 * x[:, 0])
    base = neumann_transform_fixed_mu(cosine_sol, g, 0.2, bundle)
    got = neumann_transform_fixed_lambda(cosine_sol, cosine_sol.lam + 1.0, g, 0.2, bundle)
    t = bundle.times - bundle.times[0]
    assert np.allclose(got - base, t[None, :], atol=1e-13)


def test_residual_constant_driver_zero(ou, unit_box, bundle):
    sol = vanishing_discount(ou, unit_box, make_driver("constant", c=0.6),
                             cfg=BSDEConfig(n_samples=1000))
    Y = sol.vbar(bundle.states.reshape(-1, 1)).reshape(bundle.states.shape[:2])
    rep = ebsde_residual(Y, sol.z, make_driver("constant", c=0.6), sol.lam, None, 0.0, bundle)
    assert float(rep) < 1e-12


def test_residual_with_boundary_term(cosine_sol, bundle):
    driver = make_driver("cosine")
    g = lambda x: 1.0 + 0.5 * x[:, 0]
    X = bundle.states
    zero = cosine_sol.vbar(X.reshape(-1, 1)).reshape(X.shape[:2])
    r0 = ebsde_residual(zero, cosine_sol.z, driver, cosine_sol.lam, None, 0.0, bundle)
    Yhat = neumann_transform_fixed_mu(cosine_sol, g, 0.3, bundle)
    r1 = ebsde_residual(Yhat, cosine_sol.z, driver, cosine_sol.lam, g, 0.3, bundle)
    # the dK term in the residual cancels the transform exactly
    assert float(r1) == pytest.approx(float(r0), abs=1e-12)
    assert float(r1) <= 1e-2
    # omitting the boundary term leaves the local-time integral as a defect
    r2 = ebsde_residual(Yhat, cosine_sol.z, driver, cosine_sol.lam, None, 0.0, bundle)
    assert float(r2) > float(r1)


def test_residual_argument_errors(ou, unit_box, cosine_sol, bundle):
    driver = make_driver("cosine")
    with pytest.raises(ValueError):
        ebsde_residual(np.zeros((3, 3)), cosine_sol.z, driver, 0.0, None, 0.0, bundle)
    sparse = simulate_reflected(ou, unit_box, np.zeros((5, 1)),
                                SimConfig(0.01, 0.1, 5, scheme="projected", record_every=2))
    with pytest.raises(ValueError):
        ebsde_residual(np.zeros(sparse.states.shape[:2]), cosine_sol.z, driver, 0.0, None, 0.0,
                       sparse)


def test_from_pde_normalised(ou):
    res = solve_ergodic_pde(grid_problem(ou, make_driver("cosine"), -1, 1, 200, x_ref=-1.0))
    sol = ErgodicSolution.from_pde(res, ou)
    assert sol.vbar(np.zeros((1, 1)))[0] == pytest.approx(0.0, abs=1e-15)
    assert sol.lam == res.lam
