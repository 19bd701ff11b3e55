import math

import numpy as np
import pytest

from ergodic_lab import _accel, rng


def test_derive_seed_streams_distinct_and_stable():
    seeds = {name: rng.derive_seed(7, name) for name in rng.STREAMS}
    assert len(set(seeds.values())) == len(seeds)
    assert rng.derive_seed(7, "forward") == seeds["forward"]
    assert rng.derive_seed(8, "forward") != seeds["forward"]


def test_frozen_first_uniform():
    # regression value of the splitmix64 stream
    u = rng.uniforms(rng.path_keys(0, [0]), 0)
    assert u.shape == (1,)
    assert 0.0 < u[0] < 1.0
    assert u[0] == rng.uniforms(rng.path_keys(0, [0]), 0)[0]


def test_normal_moments():
    keys = rng.path_keys(3, np.arange(200_000))
    z = rng.normals(keys, 5)
    se = 1 / math.sqrt(z.size)
    assert abs(z.mean()) < 5 * se
    assert abs(z.var() - 1) < 5 * math.sqrt(2) * se
    # fourth moment of a standard normal is 3
    assert abs((z**4).mean() - 3) < 5 * math.sqrt(96) * se


def test_increment_counter_layout():
    keys = rng.path_keys(1, np.arange(50))
    dw = rng.brownian_increments(keys, 3, 2, 0.25)
    assert np.array_equal(dw[:, 1], 0.5 * rng.normals(keys, 3 * 2 + 1))
    assert np.array_equal(dw[:, 0], 0.5 * rng.normals(keys, 6))


def test_counter_rng_random_access():
    a = rng.CounterRNG(11, 20)
    late = a.increments(9, 1, 0.01)
    for k in range(9):
        a.increments(k, 1, 0.01)
    assert np.array_equal(late, a.increments(9, 1, 0.01))
    # a sub-range of paths reproduces the same streams
    b = rng.CounterRNG(11, 5, first_path=10)
    assert np.array_equal(b.increments(9, 1, 0.01), late[10:15])


@pytest.mark.skipif(not _accel.HAS_NUMBA, reason="numba not installed")
def test_compiled_normal_matches_numpy():
    import numba

    @numba.njit
    def draw(keys, counter):
        out = np.empty(keys.size)
        for i in range(keys.size):
            out[i] = rng.normal_nb(keys[i], counter)
        return out

    keys = rng.path_keys(5, np.arange(1000))
    # same uniforms; log/cos may differ in the last ulp between libm and numpy
    assert np.abs(draw(keys, 17) - rng.normals(keys, 17)).max() < 1e-12
