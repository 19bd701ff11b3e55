"""Counter-based Gaussian streams.

Every variate is a pure function of ``(seed, path, counter)``: path ``i`` sees
the same increments no matter how many paths are simulated alongside it, and
any step can be regenerated without replaying the stream. The mixer is the
splitmix64 finalizer; uniforms use the top 53 bits and normals come from
Box-Muller on two consecutive counters.
"""
import math

import numpy as np

from ._accel import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_WEYL = np.uint64(0xD1B54A32D192ED03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO53 = 1.0 / 9007199254740992.0

# stream ids for named sub-streams derived from one top-level seed
STREAMS = {"forward": 1, "bsde": 2, "control": 3, "model-check": 4, "mixing": 5}


def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def derive_seed(seed, stream):
    """Seed of a named sub-stream (see ``STREAMS``) of ``seed``."""
    sid = STREAMS[stream] if isinstance(stream, str) else int(stream)
    with np.errstate(over="ignore"):
        z = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + np.uint64(sid) * _GOLDEN)
    return int(z)


def path_keys(seed, paths):
    paths = np.asarray(paths, dtype=np.uint64)
    with np.errstate(over="ignore"):
        base = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF))
        return _mix64(base + (paths + np.uint64(1)) * _GOLDEN)


def uniforms(keys, counter):
    """Uniforms in (0, 1) for each path key at integer ``counter``."""
    with np.errstate(over="ignore"):
        z = _mix64(keys + (np.uint64(counter) + np.uint64(1)) * _WEYL)
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO53


def normals(keys, counter):
    u1 = uniforms(keys, 2 * counter)
    u2 = uniforms(keys, 2 * counter + 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def brownian_increments(keys, step, dim, dt):
    """``[n_paths, dim]`` increments of step ``step``."""
    out = np.empty((keys.shape[0], dim))
    sq = math.sqrt(dt)
    for j in range(dim):
        out[:, j] = sq * normals(keys, step * dim + j)
    return out


class CounterRNG:
    """Random-access Gaussian/uniform source keyed by (seed, path)."""

    def __init__(self, seed, n_paths, first_path=0):
        self.seed = int(seed)
        self.paths = np.arange(first_path, first_path + n_paths, dtype=np.uint64)
        self.keys = path_keys(self.seed, self.paths)

    def increments(self, step, dim, dt):
        return brownian_increments(self.keys, step, dim, dt)

    def uniform(self, counter, lo=0.0, hi=1.0):
        return lo + (hi - lo) * uniforms(self.keys, counter)


# -- compiled twins -----------------------------------------------------------

@njit(inline="always")
def _mix64_nb(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(inline="always")
def _uniform_nb(key, counter):
    z = _mix64_nb(key + (np.uint64(counter) + np.uint64(1)) * np.uint64(0xD1B54A32D192ED03))
    return (np.float64(z >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@njit(inline="always")
def normal_nb(key, counter):
    u1 = _uniform_nb(key, 2 * counter)
    u2 = _uniform_nb(key, 2 * counter + 1)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
