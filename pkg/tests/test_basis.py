import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ergodic_lab.basis import Basis, BasisFunction, ExtrapolationWarning, ridge_projector


@pytest.mark.parametrize("dim,degree,size", [(1, 4, 5), (2, 4, 15), (3, 2, 10)])
def test_sizes(dim, degree, size):
    assert Basis(np.zeros(dim), np.ones(dim), degree).size == size
    assert Basis(np.zeros(dim), np.ones(dim), degree, "cosine").size == size
    # the union keeps the constant once
    assert Basis(np.zeros(dim), np.ones(dim), degree, "legendre+cosine").size == 2 * size - 1


def test_constant_first_and_legendre_values():
    b = Basis([-1.0], [1.0], 3)
    x = np.array([[-1.0], [0.0], [0.5], [1.0]])
    V = b.values(x)
    u = x[:, 0]
    assert np.allclose(V[:, 0], 1.0)
    assert np.allclose(V[:, 1], u)
    assert np.allclose(V[:, 2], 0.5 * (3 * u**2 - 1))
    assert np.allclose(V[:, 3], 0.5 * (5 * u**3 - 3 * u))


def test_cosine_neumann_at_faces():
    b = Basis([-1.0, 0.0], [1.0, 2.0], 4, "cosine")
    rs = np.random.default_rng(0)
    faces = rs.uniform([-1, 0], [1, 2], size=(50, 2))
    faces[:25, 0] = rs.choice([-1.0, 1.0], 25)
    faces[25:, 1] = rs.choice([0.0, 2.0], 25)
    G = b.gradients(faces)
    assert np.abs(G[:25, :, 0]).max() < 1e-12
    assert np.abs(G[25:, :, 1]).max() < 1e-12


@settings(max_examples=30, deadline=None)
@given(kind=st.sampled_from(["legendre", "cosine", "legendre+cosine"]),
       x=st.lists(st.floats(-0.95, 0.95), min_size=2, max_size=2))
def test_gradients_match_central_differences(kind, x):
    b = Basis([-1.0, -1.0], [1.0, 1.0], 4, kind)
    x = np.array([x])
    h = 1e-6
    G = b.gradients(x)[0]
    for j in range(2):
        e = np.zeros((1, 2))
        e[0, j] = h
        fd = (b.values(x + e) - b.values(x - e))[0] / (2 * h)
        assert np.allclose(G[:, j], fd, atol=1e-6)


def test_ridge_projector_reproduces_span():
    b = Basis([-2.0], [2.0], 4)
    x = np.linspace(-2, 2, 300)[:, None]
    Phi = b.values(x)
    P = ridge_projector(Phi)
    coef = np.array([0.3, -1.0, 2.0, 0.5, -0.25])
    assert np.allclose(P @ (Phi @ coef), coef, atol=1e-6)
    # the intercept is not shrunk, so constants are exact
    const = P @ np.full(len(x), 7.0)
    assert const[0] == pytest.approx(7.0, abs=1e-12)
    assert np.abs(const[1:]).max() < 1e-12


def test_ridge_projector_rank_loss():
    Phi = np.ones((10, 3))
    with pytest.raises(np.linalg.LinAlgError):
        ridge_projector(Phi)
    with pytest.raises(np.linalg.LinAlgError):
        ridge_projector(np.eye(3)[:2])


def test_basis_function_behaviour():
    b = Basis([-1.0], [1.0], 2)
    f = BasisFunction(b, [1.0, 2.0, 0.0], shift=0.5, bound=2.0)
    x = np.array([[0.0], [0.5], [1.0]])
    assert np.allclose(f(x), [0.5, 1.5, 2.0])  # last value clipped from 2.5
    assert np.allclose(f.gradient(x)[:, 0], 2.0)
    assert np.allclose(f.shifted(0.5)(x[:1]), 0.0)
    with pytest.warns(ExtrapolationWarning):
        f(np.array([[1.5]]))
    assert f.outside(np.array([[1.5], [0.0]])).tolist() == [True, False]


def test_dict_roundtrip():
    b = Basis([-1.0, 0.0], [1.0, 3.0], 3, "legendre+cosine")
    f = BasisFunction(b, np.arange(b.size) / 10, shift=0.2, bound=4.0)
    g = BasisFunction.from_dict(f.to_dict())
    x = np.random.default_rng(1).uniform([-1, 0], [1, 3], size=(20, 2))
    assert np.array_equal(f(x), g(x))
    assert g.basis.id == b.id


@pytest.mark.parametrize("args", [([1.0], [0.0], 2, "legendre"), ([0.0], [1.0], 2, "fourier"),
                                  ([0.0], [1.0], -1, "legendre")])
def test_invalid(args):
    with pytest.raises(ValueError):
        Basis(*args)


def test_cosine_values():
    b = Basis([0.0], [2.0], 2, "cosine")
    x = np.array([[0.5]])
    assert np.allclose(b.values(x)[0], [1.0, math.cos(math.pi / 4), math.cos(math.pi / 2)])
