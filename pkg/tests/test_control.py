import numpy as np
import pytest

from ergodic_lab.control import (build_hamiltonian, constant_policy, ergodic_cost,
                                 ergodic_cost_girsanov, feedback_policy, hamiltonian_argmin,
                                 make_control)
from ergodic_lab.ergodic import ErgodicSolution
from ergodic_lab.model import Box, ControlSpec, check_driver
from ergodic_lab.pde import grid_problem, solve_ergodic_pde
from ergodic_lab.sde import SimConfig

RS = np.random.default_rng(7)
X = RS.uniform(-1, 1, (500, 1))
Z = RS.uniform(-4, 4, (500, 1))


def _quadratic_box(resolution=101):
    return ControlSpec(Box([-1.0], [1.0], resolution=resolution), lambda u: u[:, :1],
                       lambda x, u: u[:, 0] ** 2, 1.0, 1.0)


@pytest.fixture(scope="module")
def optimal(ou):
    ctrl = make_control("quadratic_cosine")
    driver, gamma = build_hamiltonian(ctrl)
    sol = ErgodicSolution.from_pde(solve_ergodic_pde(grid_problem(ou, driver, -1, 1, 400)), ou)
    return ctrl, gamma, sol


def test_bang_bang_closed_form():
    ctrl = make_control("bang_bang", r=2.0, kappa=0.5)
    driver, gamma = build_hamiltonian(ctrl)
    s = 0.5 + 2.0 * Z[:, 0]
    assert np.allclose(driver(X, Z), np.cos(X[:, 0]) - np.abs(s), atol=1e-14)
    u = gamma(X, Z)[:, 0]
    assert np.array_equal(u[s != 0], -np.sign(s[s != 0]))
    # kappa + z r = 0: both controls tie and the lowest index (u = -1) wins
    tie = gamma(np.zeros((3, 1)), np.full((3, 1), -0.25))
    assert np.array_equal(tie, -np.ones((3, 1)))


def test_finite_quadratic_at_zero_gradient():
    ctrl = ControlSpec(np.array([[-1.0], [0.0], [1.0]]), lambda u: u[:, :1],
                       lambda x, u: u[:, 0] ** 2, 1.0, 1.0)
    driver, gamma = build_hamiltonian(ctrl)
    zero = np.zeros_like(X)
    assert np.array_equal(driver(X, zero), np.zeros(len(X)))
    assert np.array_equal(gamma(X, zero), np.zeros((len(X), 1)))


def test_box_grid_matches_closed_form():
    driver, gamma = build_hamiltonian(_quadratic_box())
    z = Z[:, 0]
    exact = np.where(np.abs(z) <= 2, -z**2 / 4, 1 - np.abs(z))
    assert np.abs(driver(X, Z) - exact).max() < 1e-6
    assert np.abs(gamma(X, Z)[:, 0] - np.clip(-z / 2, -1, 1)).max() < 1e-6


def test_closed_form_minimizer_agrees_with_search():
    ctrl = make_control("quadratic_cosine")
    a = hamiltonian_argmin(ctrl, X, Z, use_closed_form=True)
    b = hamiltonian_argmin(ctrl, X, Z, use_closed_form=False)
    assert np.abs(a - b).max() < 1e-6
    da, _ = build_hamiltonian(ctrl, use_closed_form=True)
    db, _ = build_hamiltonian(ctrl, use_closed_form=False)
    assert da.name != db.name
    assert np.abs(da(X, Z) - db(X, Z)).max() < 1e-10


@pytest.mark.parametrize("preset", ["quadratic_cosine", "bang_bang", "constant_cost"])
def test_hamiltonian_dominance(preset):
    ctrl = make_control(preset)
    driver, gamma = build_hamiltonian(ctrl)
    psi = driver(X, Z)
    if ctrl.is_finite:
        us = np.asarray(ctrl.control_set, float)
    else:
        us = np.linspace(ctrl.control_set.lo, ctrl.control_set.hi, 41)
    for u in us:
        ub = np.broadcast_to(u, (len(X), len(u)))
        assert np.all(psi <= ctrl.L(X, ub) + np.einsum("nd,nd->n", Z, ctrl.R(ub)) + 1e-12)
    g = gamma(X, Z)
    assert np.allclose(psi, ctrl.L(X, g) + np.einsum("nd,nd->n", Z, ctrl.R(g)), atol=1e-14)
    rep = check_driver(driver, 1)
    assert rep.passed
    assert driver.M_psi == max(ctrl.M_L, ctrl.M_R)


def test_gamma_deterministic():
    _, gamma = build_hamiltonian(_quadratic_box())
    assert np.array_equal(gamma(X, Z), gamma(X.copy(), Z.copy()))


def test_empty_control_set():
    ctrl = ControlSpec(np.empty((0, 1)), lambda u: u, lambda x, u: u[:, 0], 1.0, 1.0)
    with pytest.raises(ValueError, match="empty"):
        build_hamiltonian(ctrl)


def test_constant_cost_every_policy(ou, unit_box):
    ctrl = make_control("constant_cost", c=0.8)
    cfg = SimConfig(0.01, 2.0, 50)
    _, gamma = build_hamiltonian(ctrl)
    policies = [constant_policy(1.0), constant_policy(-1.0),
                feedback_policy(gamma, lambda x: np.sin(x))]
    for pol in policies:
        rep = ergodic_cost(ou, unit_box, ctrl, pol, 2.0, cfg)
        assert rep.I_estimate == pytest.approx(0.8, abs=1e-12)


def test_optimal_feedback_attains_lambda(ou, unit_box, optimal):
    ctrl, gamma, sol = optimal
    cfg = SimConfig(0.01, 10.0, 1000, seed=1)
    rep = ergodic_cost(ou, unit_box, ctrl, feedback_policy(gamma, sol.z), 10.0, cfg)
    assert abs(rep.I_estimate - sol.lam) <= 5e-2
    for u0 in (-1.0, 0.5, 1.0):
        other = ergodic_cost(ou, unit_box, ctrl, constant_policy(u0), 10.0, cfg)
        assert other.I_estimate >= sol.lam - 5e-2
        assert rep.I_estimate <= other.I_estimate + 5e-2


def test_policy_ordering_over_starts(ou, unit_box, optimal):
    ctrl, gamma, sol = optimal
    cfg = SimConfig(0.01, 10.0, 500, seed=2)
    for x0 in (-0.9, 0.9):
        best = ergodic_cost(ou, unit_box, ctrl, feedback_policy(gamma, sol.z), 10.0, cfg, x0=[x0])
        worse = ergodic_cost(ou, unit_box, ctrl, constant_policy(0.7), 10.0, cfg, x0=[x0])
        assert best.I_estimate <= worse.I_estimate + 5e-2


def test_girsanov_matches_direct(ou, unit_box, optimal):
    ctrl, gamma, sol = optimal
    cfg = SimConfig(0.01, 1.0, 10000, seed=3)
    for pol in (feedback_policy(gamma, sol.z), constant_policy(0.8)):
        a = ergodic_cost(ou, unit_box, ctrl, pol, 1.0, cfg, burn_in=0.0)
        b = ergodic_cost_girsanov(ou, unit_box, ctrl, pol, 1.0, cfg)
        assert abs(a.I_estimate - b.I_estimate) <= 3 * np.hypot(a.stderr, b.stderr)


def test_non_finite_cost_raises(ou, unit_box):
    ctrl = make_control("quadratic_cosine")

    def broken(t, x):
        return np.full((x.shape[0], 1), np.nan)

    with pytest.raises(FloatingPointError, match="non-finite"):
        ergodic_cost(ou, unit_box, ctrl, broken, 1.0, SimConfig(0.1, 1.0, 4))


def test_burn_in_validation(ou, unit_box):
    ctrl = make_control("quadratic_cosine")
    with pytest.raises(ValueError):
        ergodic_cost(ou, unit_box, ctrl, constant_policy(0.0), 1.0, SimConfig(0.1, 1.0, 4),
                     burn_in=1.0)
    with pytest.raises(ValueError):
        ergodic_cost_girsanov(ou, unit_box, ctrl, constant_policy(0.0), 1.0,
                              SimConfig(0.1, 1.0, 4), burn_in=2.0)


def test_unknown_preset():
    with pytest.raises(KeyError):
        make_control("nope")
