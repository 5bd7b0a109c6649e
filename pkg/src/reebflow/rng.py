"""
Counter-based random streams.

Every draw is a pure function of ``(seed, stream, step)``: the Philox key is
``(seed, stream)`` and the counter starts at ``step``.  A block for ``N`` paths
is laid out path-major, so path ``i`` always sees the same numbers no matter
how many other paths are simulated.  Reusing a seed across an epsilon ladder
therefore couples the runs through identical Brownian increments.
"""
from __future__ import annotations

import numpy as np

__all__ = ["STREAMS", "generator", "uniform_block", "normal_block", "exponential_block"]

STREAMS = {"fastflow": 1, "ctmc": 2, "noise": 3, "spde2d": 4, "misc": 5}

_MASK = (1 << 64) - 1


def generator(seed: int, stream: int | str, step: int = 0) -> np.random.Generator:
    """Generator positioned at ``step`` of stream ``stream`` under master ``seed``."""
    if isinstance(stream, str):
        stream = STREAMS[stream]
    bg = np.random.Philox(key=[int(seed) & _MASK, int(stream) & _MASK],
                          counter=[0, 0, int(step) & _MASK, 0])
    return np.random.Generator(bg)


def uniform_block(seed, stream, step, shape):
    return generator(seed, stream, step).random(shape)


def normal_block(seed, stream, step, shape):
    return generator(seed, stream, step).standard_normal(shape)


def exponential_block(seed, stream, step, shape):
    """Unit exponentials as ``-log1p(-U)`` so that both kernel backends see the same floats."""
    return -np.log1p(-generator(seed, stream, step).random(shape))


# -- per-path streams ---------------------------------------------------------
# SplitMix64 evaluated at an arbitrary position: path p's n-th number is
# mix(key_p + (n + 1) * GOLDEN).  Chains with heavy-tailed jump counts then draw
# exactly what each path consumes, independent of batching.

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z):
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def path_keys(seed: int, stream: int | str, ids) -> np.ndarray:
    """Per-path SplitMix64 keys for master ``seed`` and ``stream``."""
    if isinstance(stream, str):
        stream = STREAMS[stream]
    base = _mix(np.uint64((int(seed) * 0x100000001B3 + int(stream)) & _MASK))
    with np.errstate(over="ignore"):
        return _mix(base ^ _mix(np.asarray(ids, dtype=np.uint64) + _GOLDEN))


def path_uniforms(keys, counters) -> np.ndarray:
    """Uniforms in ``[0, 1)`` at positions ``counters`` of the streams ``keys`` (broadcast)."""
    keys = np.asarray(keys, dtype=np.uint64)
    counters = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _mix(keys + (counters + np.uint64(1)) * _GOLDEN)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
