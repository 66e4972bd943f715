"""Optional compiled inner loop for the lossy averaging rounds.

Reproduces :func:`dkfnet.rng.uniforms` bit for bit, so the compiled and the
numpy paths consume identical failure draws. ``consensus_rounds`` is None
when numba is not installed.
"""
import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

consensus_rounds = None

if numba is not None:
    _GOLDEN = np.uint64(0x9E3779B97F4A7C15)
    _M1 = np.uint64(0xBF58476D1CE4E5B9)
    _M2 = np.uint64(0x94D049BB133111EB)
    _S30 = np.uint64(30)
    _S27 = np.uint64(27)
    _S31 = np.uint64(31)
    _S11 = np.uint64(11)
    _SCALE = 1.0 / (1 << 53)

    @numba.njit(cache=True, inline="always")
    def _mix(z):
        z = (z ^ (z >> _S30)) * _M1
        z = (z ^ (z >> _S27)) * _M2
        return z ^ (z >> _S31)

    @numba.njit(cache=True)
    def _consensus_rounds(z, ei, ej, prefix, trials, t, gamma, p_beta, inv_delta):
        S, N, n = z.shape
        E = ei.shape[0]
        flow = np.empty((E, n))
        for s in range(S):
            hs = _mix(prefix ^ (np.uint64(trials[s]) + _GOLDEN))
            hs = _mix(hs ^ (np.uint64(t) + _GOLDEN))
            for h in range(gamma):
                hh = _mix(hs ^ (np.uint64(h) + _GOLDEN))
                for e in range(E):
                    u = (_mix(hh ^ (np.uint64(e) + _GOLDEN)) >> _S11) * _SCALE
                    a = ei[e]
                    b = ej[e]
                    if u < p_beta:
                        for k in range(n):
                            flow[e, k] = z[s, a, k] - z[s, b, k]
                    else:
                        for k in range(n):
                            flow[e, k] = 0.0
                for e in range(E):
                    a = ei[e]
                    b = ej[e]
                    for k in range(n):
                        d = inv_delta * flow[e, k]
                        z[s, a, k] -= d
                        z[s, b, k] += d

    def consensus_rounds(z, edges, seed, stream, trials, t, gamma, p_beta, delta):
        """Apply ``gamma`` lossy averaging rounds to ``z`` (S, N, n) in place."""
        from .rng import hash_key
        prefix = np.uint64(hash_key(seed, stream))
        ei = np.ascontiguousarray([e[0] for e in edges], dtype=np.int64)
        ej = np.ascontiguousarray([e[1] for e in edges], dtype=np.int64)
        _consensus_rounds(z, ei, ej, prefix, np.asarray(trials, dtype=np.int64),
                          int(t), int(gamma), float(p_beta), 1.0 / float(delta))
        return z
