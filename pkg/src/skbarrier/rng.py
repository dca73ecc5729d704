"""Counter-based random numbers keyed by (seed, stream, path, counter).

Every draw is a pure function of its key, so a path simulated alone, in a
chunk, or on another thread sees exactly the same numbers. The compiled
kernel implements the same mixing function bit for bit.
"""
import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# stream ids
STEPS = 0
STARTS = 1
COINS = 2


def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def path_keys(seed, stream, paths):
    """Per-path 64-bit keys for the given stream."""
    with np.errstate(over="ignore"):
        base = _mix(np.asarray(int(seed) % 2**64, dtype=np.uint64) * GOLDEN
                    + np.uint64(stream + 1))
        p = np.asarray(paths, dtype=np.uint64)
        return _mix(base ^ ((p + np.uint64(1)) * GOLDEN))


def uniforms(keys, counters):
    """Uniform draws in [0, 1) for matching arrays of keys and counters."""
    with np.errstate(over="ignore"):
        c = np.asarray(counters, dtype=np.uint64)
        z = _mix(np.asarray(keys, dtype=np.uint64) + (c + np.uint64(1)) * GOLDEN)
    return (z >> _S11).astype(np.float64) * _INV53


def normals(keys, counter0, d):
    """Standard normal vectors, shape ``(len(keys), d)``.

    Consumes ``2 * ceil(d / 2)`` counters starting at ``counter0`` (Box-Muller
    pairs, both outputs used).
    """
    keys = np.asarray(keys, dtype=np.uint64)
    counter0 = np.asarray(counter0, dtype=np.int64)
    pairs = (d + 1) // 2
    out = np.empty((keys.shape[0], 2 * pairs))
    for k in range(pairs):
        u1 = uniforms(keys, counter0 + 2 * k)
        u2 = uniforms(keys, counter0 + 2 * k + 1)
        rad = np.sqrt(-2.0 * np.log(1.0 - u1))
        th = 2.0 * np.pi * u2
        out[:, 2 * k] = rad * np.cos(th)
        out[:, 2 * k + 1] = rad * np.sin(th)
    return out[:, :d]


def block_size(d):
    """Counters consumed per simulation step in dimension ``d``.

    Layout: ``2*ceil(d/2)`` normal slots, then exit-time, inner bridge, outer
    bridge, plane bridge and coin slots.
    """
    return 2 * ((d + 1) // 2) + 5
