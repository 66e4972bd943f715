"""LTI plant with per-node sensors and the centralized Kalman filter."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import List, Optional, Sequence

import numpy as np

PSD_TOL = 1e-10
RANK_TOL = 1e-9


class PlantError(ValueError):
    pass


class RiccatiError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


def _min_eig(m):
    return float(np.min(np.linalg.eigvalsh((m + m.T) / 2))) if m.size else 0.0


def psd_sqrt(m: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Symmetric square root; eigenvalues below ``floor`` are clamped to it."""
    w, v = np.linalg.eigh((m + m.T) / 2)
    return (v * np.sqrt(np.maximum(w, floor))) @ v.T


def _rank(m):
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    return int(np.sum(s > RANK_TOL * s[0])) if s[0] > 0 else 0


@dataclass(frozen=True, eq=False)
class Plant:
    """``x+ = A x + f``, ``y_i = C_i x + g_i`` with Gaussian noises.

    ``C[i]`` may have zero rows (a node without sensors); the matching
    ``R[i]`` is then 0 x 0.
    """

    A: np.ndarray
    Q: np.ndarray
    C: Sequence[np.ndarray]
    R: Sequence[np.ndarray]
    x0_mean: np.ndarray
    x0_cov: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = A.shape[0]
        if A.shape != (n, n):
            raise PlantError(f"A must be square, got {A.shape}")
        Q = np.asarray(self.Q, dtype=float).reshape(n, n)
        if len(self.C) != len(self.R) or not self.C:
            raise PlantError("need one (C_i, R_i) pair per node")
        Cs, Rs = [], []
        for i, (c, r) in enumerate(zip(self.C, self.R)):
            c = np.asarray(c, dtype=float).reshape(-1, n)
            q = c.shape[0]
            r = np.asarray(r, dtype=float).reshape(q, q)
            if q and _min_eig(r) <= 0.0:
                raise PlantError(f"R_{i} must be positive definite")
            Cs.append(c)
            Rs.append(r)
        x0 = np.asarray(self.x0_mean, dtype=float).reshape(n)
        P0 = np.asarray(self.x0_cov, dtype=float).reshape(n, n)
        for name, m in (("Q", Q), ("x0_cov", P0)):
            if _min_eig(m) < -PSD_TOL:
                raise PlantError(f"{name} must be positive semi-definite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "C", tuple(Cs))
        object.__setattr__(self, "R", tuple(Rs))
        object.__setattr__(self, "x0_mean", x0)
        object.__setattr__(self, "x0_cov", P0)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def n_nodes(self) -> int:
        return len(self.C)

    @property
    def q(self) -> List[int]:
        return [c.shape[0] for c in self.C]

    @cached_property
    def information(self) -> np.ndarray:
        """Per-node ``C_i^T R_i^{-1} C_i``, shape (N, n, n)."""
        out = np.zeros((self.n_nodes, self.n, self.n))
        for i, (c, r) in enumerate(zip(self.C, self.R)):
            if c.shape[0]:
                out[i] = c.T @ np.linalg.solve(r, c)
        return out

    @cached_property
    def G(self) -> np.ndarray:
        return self.information.sum(axis=0)

    @cached_property
    def C_stacked(self) -> np.ndarray:
        rows = [c for c in self.C if c.shape[0]]
        return np.vstack(rows) if rows else np.zeros((0, self.n))

    @cached_property
    def R_stacked(self) -> np.ndarray:
        q = sum(self.q)
        out = np.zeros((q, q))
        k = 0
        for r in self.R:
            out[k:k + r.shape[0], k:k + r.shape[0]] = r
            k += r.shape[0]
        return out

    def observable(self) -> bool:
        c = self.C_stacked
        obs = np.vstack([c @ np.linalg.matrix_power(self.A, k) for k in range(self.n)])
        return _rank(obs) == self.n

    def controllable(self) -> bool:
        b = psd_sqrt(self.Q)
        ctrb = np.hstack([np.linalg.matrix_power(self.A, k) @ b for k in range(self.n)])
        return _rank(ctrb) == self.n


@dataclass
class Trajectory:
    """States ``x_0..x_T`` (T+1, n) and per-node outputs (T+1, q_i).

    Row 0 of each output array is the measurement of ``x_0``; filters start
    consuming outputs at row 1.
    """

    states: np.ndarray
    outputs: List[np.ndarray] = field(default_factory=list)

    def __len__(self):
        return self.states.shape[0]


@dataclass(frozen=True, eq=False)
class CentralizedSolution:
    P_inf: np.ndarray
    K_inf: np.ndarray
    A_C: np.ndarray
    G: np.ndarray
    N: int
    iterations: int = 0
    residual: float = 0.0


def paper5_plant(tau: float = 0.25, sigma: float = 0.05, sigma_g: float = 0.1,
                 n_nodes: int = 10, sensor_nodes=(4, 9), x0_mean=(1.0, 1.0, 0.5, 0.5),
                 x0_cov=None) -> Plant:
    """Planar double integrator; two nodes see one position coordinate each.

    ``sensor_nodes`` are 0-based: the defaults are the fifth and tenth node.
    """
    I2 = np.eye(2)
    Z2 = np.zeros((2, 2))
    A = np.block([[I2, tau * I2], [Z2, I2]])
    Q = sigma ** 2 * np.block([[tau ** 3 / 3 * I2, tau ** 2 / 2 * I2],
                               [tau ** 2 / 2 * I2, I2]])
    C = [np.zeros((0, 4)) for _ in range(n_nodes)]
    R = [np.zeros((0, 0)) for _ in range(n_nodes)]
    rows = [np.array([[1.0, 0.0, 0.0, 0.0]]), np.array([[0.0, 1.0, 0.0, 0.0]])]
    for node, row in zip(sensor_nodes, rows):
        C[node] = row
        R[node] = np.array([[sigma_g ** 2]])
    return Plant(A, Q, C, R, np.asarray(x0_mean, dtype=float),
                 np.eye(4) if x0_cov is None else np.asarray(x0_cov, dtype=float))


def step_plant(p: Plant, x: np.ndarray, rng: np.random.Generator):
    """One transition and the per-node measurements of the new state."""
    x = np.asarray(x, dtype=float)
    if x.shape != (p.n,):
        raise PlantError(f"state must have shape ({p.n},), got {x.shape}")
    x_next = p.A @ x + rng.multivariate_normal(np.zeros(p.n), p.Q, method="eigh")
    ys = [c @ x_next + (rng.multivariate_normal(np.zeros(c.shape[0]), r, method="eigh")
                        if c.shape[0] else np.zeros(0))
          for c, r in zip(p.C, p.R)]
    return x_next, ys


def _noise_factors(p: Plant):
    fq = psd_sqrt(p.Q)
    fr = [np.linalg.cholesky(r) if r.size else r for r in p.R]
    f0 = psd_sqrt(p.x0_cov)
    return fq, fr, f0


def simulate(p: Plant, steps: int, rng: Optional[np.random.Generator] = None,
             noiseless: bool = False, x0: Optional[np.ndarray] = None) -> Trajectory:
    """Sample ``x_0`` and run ``steps`` transitions.

    ``noiseless`` zeroes f and g (and starts at ``x0`` or the prior mean).
    """
    rng = np.random.default_rng() if rng is None else rng
    fq, fr, f0 = _noise_factors(p)
    n = p.n
    xs = np.zeros((steps + 1, n))
    if x0 is not None:
        xs[0] = x0
    elif noiseless:
        xs[0] = p.x0_mean
    else:
        xs[0] = p.x0_mean + f0 @ rng.standard_normal(n)
    f = np.zeros((steps, n)) if noiseless else rng.standard_normal((steps, n)) @ fq.T
    for t in range(steps):
        xs[t + 1] = p.A @ xs[t] + f[t]
    outs = []
    for c, l in zip(p.C, fr):
        y = xs @ c.T
        if c.shape[0] and not noiseless:
            y = y + rng.standard_normal((steps + 1, c.shape[0])) @ l.T
        outs.append(y)
    return Trajectory(xs, outs)


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Noise stream of one Monte-Carlo trial; independent of p_beta and gamma."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


def simulate_batch(p: Plant, steps: int, trials: int, seed: int, first_trial: int = 0):
    """Trajectories of trials ``first_trial..first_trial+trials-1`` stacked.

    Returns ``(states, outputs)`` with shapes (trials, T+1, n) and a list of
    (trials, T+1, q_i) arrays.
    """
    trajs = [simulate(p, steps, trial_rng(seed, k)) for k in range(first_trial, first_trial + trials)]
    states = np.stack([tr.states for tr in trajs])
    outputs = [np.stack([tr.outputs[i] for tr in trajs]) for i in range(p.n_nodes)]
    return states, outputs


def riccati_map(p: Plant, P: np.ndarray, G: Optional[np.ndarray] = None) -> np.ndarray:
    """``(A P A^T + Q)(I + G (A P A^T + Q))^{-1}``."""
    G = p.G if G is None else G
    M = p.A @ P @ p.A.T + p.Q
    out = np.linalg.solve((np.eye(p.n) + G @ M).T, M.T).T
    return (out + out.T) / 2


def riccati_residual(p: Plant, P: np.ndarray, K: np.ndarray) -> float:
    """Frobenius residual of the centralized Riccati identity."""
    C = p.C_stacked
    IKC = np.eye(p.n) - K @ C
    rhs = IKC @ (p.A @ P @ p.A.T + p.Q) @ IKC.T
    if C.shape[0]:
        rhs = rhs + P @ C.T @ np.linalg.solve(p.R_stacked, C @ P)
    return float(np.linalg.norm(P - rhs))


def solve_riccati(p: Plant, tol: float = 1e-12, max_iter: int = 100_000,
                  check_assumptions: bool = True) -> CentralizedSolution:
    """Fixed point of :func:`riccati_map` by plain iteration.

    Starts from the prior covariance (identity if it is zero). Raises
    :class:`RiccatiError` if successive iterates still differ by ``tol`` after
    ``max_iter`` steps.
    """
    if check_assumptions:
        if not p.observable():
            raise PlantError("(C, A) is not observable")
        if not p.controllable():
            raise PlantError("(A, Q^1/2) is not controllable")
    P = p.x0_cov.copy() if np.any(p.x0_cov) else np.eye(p.n)
    delta = np.inf
    for k in range(1, max_iter + 1):
        P_next = riccati_map(p, P)
        delta = float(np.linalg.norm(P_next - P))
        P = P_next
        if delta < tol:
            break
    else:
        raise RiccatiError("Riccati iteration did not converge", delta)
    C = p.C_stacked
    K = P @ C.T @ np.linalg.inv(p.R_stacked) if C.shape[0] else np.zeros((p.n, 0))
    A_C = (np.eye(p.n) - K @ C) @ p.A
    res = riccati_residual(p, P, K)
    if res > 1e-9 * max(1.0, np.linalg.norm(P)):
        raise RiccatiError("fixed point fails the Riccati identity", res)
    return CentralizedSolution(P, K, A_C, p.G.copy(), p.n_nodes, k, res)


def stacked_outputs(p: Plant, outputs: Sequence[np.ndarray]) -> np.ndarray:
    """Concatenate per-node outputs along the last axis (sensor nodes only)."""
    parts = [y for y, c in zip(outputs, p.C) if c.shape[0]]
    return np.concatenate(parts, axis=-1) if parts else np.zeros(outputs[0].shape[:-1] + (0,))


def centralized_kf(p: Plant, sol: CentralizedSolution, outputs: Sequence[np.ndarray],
                   x_hat0: Optional[np.ndarray] = None) -> np.ndarray:
    """Steady-state centralized filter ``x+ = A x + K (y - C A x)``.

    ``outputs`` are per-node arrays with time on axis -2 (leading batch axes
    allowed). Returns estimates with the same leading shape and time length.
    """
    y = stacked_outputs(p, outputs)
    T = y.shape[-2]
    lead = y.shape[:-2]
    xh = np.empty(lead + (T, p.n))
    xh[..., 0, :] = p.x0_mean if x_hat0 is None else x_hat0
    C = p.C_stacked
    for t in range(1, T):
        pred = xh[..., t - 1, :] @ p.A.T
        xh[..., t, :] = pred + (y[..., t, :] - pred @ C.T) @ sol.K_inf.T
    return xh


def error_covariance(states: np.ndarray, estimates: np.ndarray, burn_in: int = 0) -> np.ndarray:
    """Average of ``e e^T`` over all leading axes and times ``>= burn_in``."""
    e = (states - estimates)[..., burn_in:, :]
    e = e.reshape(-1, e.shape[-1])
    return e.T @ e / e.shape[0]
