"""Counter-based random streams.

Every draw is a pure function of ``(seed, stream, key, step, channel)``, so an
agent's random numbers do not depend on how many other agents exist, in which
order they are processed, or how the work is split across workers.  The mixing
function is SplitMix64's finalizer, chained over the scalar fields and applied
twice to the per-agent key.
"""
from __future__ import annotations

import math

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1
_INV53 = 1.0 / 9007199254740992.0

# Stream identifiers; any distinct constants work.
INIT = 1
BACTERIA = 2
LIFECYCLE = 3
AC_MOTION = 4


def _mix(x: np.ndarray) -> np.ndarray:
    x = x + _GOLDEN
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def _mix_int(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK
    return x ^ (x >> 31)


def stream_key(seed: int, stream: int, step: int, channel: int) -> np.uint64:
    """Scalar part of the key chain; combined with each agent key by :func:`hash_u64`."""
    return np.uint64(_mix_int(_mix_int(_mix_int((seed & _MASK) ^ stream) ^ (step & _MASK))
                              ^ (channel & _MASK)))


def hash_u64(seed: int, stream: int, key, step: int, channel: int) -> np.ndarray:
    s = stream_key(seed, stream, step, channel)
    k = np.asarray(key, dtype=np.int64).astype(np.uint64)
    with np.errstate(over="ignore"):
        return _mix(_mix(k ^ s))


def uniform(seed: int, stream: int, key, step: int, channel: int = 0) -> np.ndarray:
    """Uniform draws in [0, 1), one per entry of ``key``."""
    h = hash_u64(seed, stream, key, step, channel)
    return (h >> np.uint64(11)).astype(np.float64) * _INV53


def unit_vectors(seed: int, stream: int, key, step: int, channel: int = 0) -> np.ndarray:
    """Isotropic unit vectors, shape ``key.shape + (3,)``; uses ``channel`` and ``channel + 1``."""
    z = 2.0 * uniform(seed, stream, key, step, channel) - 1.0
    phi = 2.0 * np.pi * uniform(seed, stream, key, step, channel + 1)
    rho = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    v = np.stack([rho * np.cos(phi), rho * np.sin(phi), z], axis=-1)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def uniform_scalar(seed: int, stream: int, key: int, step: int, channel: int = 0) -> float:
    """Same value as :func:`uniform` for a single integer key, in pure Python."""
    s = int(stream_key(seed, stream, step, channel))
    h = _mix_int(_mix_int((key & _MASK) ^ s))
    return (h >> 11) * _INV53


def unit_vector_scalar(seed: int, stream: int, key: int, step: int, channel: int = 0):
    z = 2.0 * uniform_scalar(seed, stream, key, step, channel) - 1.0
    phi = 2.0 * math.pi * uniform_scalar(seed, stream, key, step, channel + 1)
    rho = math.sqrt(max(0.0, 1.0 - z * z))
    v = (rho * math.cos(phi), rho * math.sin(phi), z)
    n = math.sqrt(v[0] ** 2 + v[1] ** 2 + v[2] ** 2)
    return (v[0] / n, v[1] / n, v[2] / n)
