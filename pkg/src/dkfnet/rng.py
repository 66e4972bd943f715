"""Counter-based uniforms keyed by (seed, stream, trial, t, h, edge).

Every draw is a pure function of its key, so a failure pattern can be replayed
for any round without iterating the rounds before it, and draws for many
trials/rounds/edges can be produced in one vectorized call.
"""
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)

# stream tags keep the Push-Sum and averaging failure processes independent
PUSHSUM = 1
CONSENSUS = 2
DISCONNECTION = 3
NO_SUBROUND = -1


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _as_u64(x):
    arr = np.asarray(x)
    if arr.dtype.kind == "u":
        return arr.astype(np.uint64)
    return arr.astype(np.int64).view(np.uint64)


def hash_key(*components):
    """Mix integer key components (scalars or broadcastable arrays) into uint64."""
    with np.errstate(over="ignore"):
        h = _mix(np.asarray(0, dtype=np.uint64) + _GOLDEN)
        for c in components:
            h = _mix(h ^ (_as_u64(c) + _GOLDEN))
    return h


def uniforms(*components):
    """Uniform [0, 1) floats, one per broadcast element of the key components."""
    h = hash_key(*components)
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
