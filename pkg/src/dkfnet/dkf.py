"""Per-node filter recursion with gamma rounds of lossy consensus averaging.

Two implementations share the failure draws of a :class:`LinkFailureModel`:
:class:`DkfNetwork` is a node-by-node reference that follows the protocol
literally (including the live mode interleaving Push-Sum and local Riccati
steps), and :func:`run_batch` advances many Monte-Carlo trials at once with
frozen gains. Tests hold the two to the same trajectories.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np

from . import _kernels, rng
from .graph import Graph, LinkFailureModel, spectral_radius_laplacian
from .model import CentralizedSolution, Plant
from .pushsum import (DEFAULT_EPS, GainEstimate, PushSumNetwork)

DIVERGENCE_THRESHOLD = 1e8


def default_delta(g: Graph) -> float:
    """``max_i nu_i + 0.5``: exceeds the Laplacian spectral radius, locally computable."""
    return float(np.max(g.degrees)) + 0.5


@dataclass(frozen=True)
class ConsensusParams:
    delta: float
    gamma: int

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError(f"consensus gain must be positive, got {self.delta}")
        if int(self.gamma) != self.gamma or self.gamma < 0:
            raise ValueError(f"gamma must be a non-negative integer, got {self.gamma}")

    @classmethod
    def for_graph(cls, g: Graph, gamma: int, delta="auto", allow_small_delta: bool = False):
        """Validated parameters; ``delta <= rho(L)`` raises unless explicitly allowed."""
        d = default_delta(g) if delta == "auto" else float(delta)
        rho = spectral_radius_laplacian(g)
        if d <= rho:
            msg = f"delta={d} does not exceed rho(L)={rho:.6g}"
            if not allow_small_delta:
                raise ValueError(msg)
            warnings.warn(msg)
        return cls(d, int(gamma))


@dataclass(frozen=True)
class DkfNodeState:
    P_i: np.ndarray
    K_i: np.ndarray
    x_hat: np.ndarray
    z: np.ndarray
    gains: Optional[GainEstimate] = None


# --- node-level operations ------------------------------------------------

def local_gain_update(s: DkfNodeState, plant: Plant, i: int):
    """Local Riccati step with the node's current (G_i, N_i); returns ``(P, K)``."""
    if s.gains is None:
        raise ValueError(f"node {i} has no gain estimate")
    n = plant.n
    M = plant.A @ s.P_i @ plant.A.T + plant.Q
    lhs = np.eye(n) + s.gains.G_i @ M
    if np.linalg.cond(lhs) > 1e14:
        raise np.linalg.LinAlgError(f"node {i}: I + G_i(APA'+Q) is singular")
    P = np.linalg.solve(lhs.T, M.T).T
    P = (P + P.T) / 2
    C, R = plant.C[i], plant.R[i]
    if C.shape[0] and np.any(C):
        K = s.gains.N_i * P @ C.T @ np.linalg.inv(R)
    else:
        K = np.zeros((n, C.shape[0]))
    return P, K


def local_correct(s: DkfNodeState, y_i: np.ndarray, plant: Plant, i: int) -> np.ndarray:
    """``A x + K (y - C A x)``; pure prediction when the node has no sensor."""
    pred = plant.A @ s.x_hat
    C = plant.C[i]
    if C.shape[0] == 0:
        return pred
    y_i = np.asarray(y_i, dtype=float).reshape(-1)
    if y_i.shape != (C.shape[0],):
        raise ValueError(f"node {i}: measurement has shape {y_i.shape}, expected ({C.shape[0]},)")
    return pred + s.K_i @ (y_i - C @ pred)


def consensus_round(z_all: np.ndarray, subgraph: Graph, delta: float) -> np.ndarray:
    """``z_i + (1/delta) sum_{j surviving} (z_j - z_i)`` for every node."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    z_all = np.asarray(z_all, dtype=float)
    out = z_all.copy()
    for i, j in subgraph.edges:
        d = (z_all[j] - z_all[i]) / delta
        out[i] += d
        out[j] -= d
    return out


def frozen_gains(plant: Plant, sol: CentralizedSolution) -> List[np.ndarray]:
    """Asymptotic local gains ``N P_inf C_i^T R_i^{-1}``."""
    return [sol.N * sol.P_inf @ c.T @ np.linalg.inv(r) if c.shape[0] else np.zeros((plant.n, 0))
            for c, r in zip(plant.C, plant.R)]


@dataclass
class NetworkError:
    E: np.ndarray

    def per_node(self, n: int) -> np.ndarray:
        return self.E.reshape(-1, n)

    @property
    def squared_norm(self) -> float:
        return float(self.E @ self.E)


class DkfNetwork:
    """All node states of one run plus the failure model driving the links.

    ``mode="frozen"`` uses given gains (defaults to the asymptotic ones) with
    ``P_i = P_inf``; ``mode="live"`` starts from the prior and runs the
    Push-Sum and local Riccati steps every time step as the protocol does.
    """

    def __init__(self, plant: Plant, failures: LinkFailureModel, params: ConsensusParams,
                 mode: str = "frozen", sol: Optional[CentralizedSolution] = None,
                 gains: Optional[Sequence[np.ndarray]] = None, x_hat0=None, P0=None,
                 leader: int = 0, eps: float = DEFAULT_EPS, trial: int = 0):
        if mode not in ("frozen", "live"):
            raise ValueError(f"unknown mode {mode!r}")
        self.plant, self.failures, self.params = plant, failures, params
        self.graph = failures.base
        self.mode = mode
        self.trial = trial
        n, N = plant.n, plant.n_nodes
        x0 = np.zeros(n) if x_hat0 is None else np.asarray(x_hat0, dtype=float)
        x0 = np.broadcast_to(x0, (N, n))
        self.pushsum = None
        if mode == "frozen":
            if gains is None:
                if sol is None:
                    raise ValueError("frozen mode needs gains or a centralized solution")
                gains = frozen_gains(plant, sol)
            P = sol.P_inf if sol is not None else np.eye(n)
            est = GainEstimate(sol.G, float(sol.N)) if sol is not None else None
            self.nodes = [DkfNodeState(P.copy(), np.asarray(k, dtype=float).reshape(n, -1),
                                       x0[i].copy(), x0[i].copy(), est) for i, k in enumerate(gains)]
        else:
            P0 = np.eye(n) if P0 is None else np.asarray(P0, dtype=float)
            self.pushsum = PushSumNetwork(plant, failures, leader, eps, trial)
            self.nodes = [DkfNodeState(P0.copy(), np.zeros((n, plant.q[i])), x0[i].copy(), x0[i].copy(), None)
                          for i in range(N)]

    @property
    def estimates(self) -> np.ndarray:
        return np.array([s.x_hat for s in self.nodes])

    def step(self, t: int, ys: Sequence[np.ndarray]) -> None:
        """Advance from estimates at time t to t+1 given measurements y_{t+1}."""
        plant = self.plant
        if self.mode == "live":
            if not self.pushsum.all_stopped:
                self.pushsum.step()
            ests = self.pushsum.estimates()
            for i, s in enumerate(self.nodes):
                s = replace(s, gains=ests[i])
                P, K = local_gain_update(s, plant, i)
                self.nodes[i] = replace(s, P_i=P, K_i=K)
        z = np.array([local_correct(s, ys[i], plant, i) for i, s in enumerate(self.nodes)])
        for h in range(self.params.gamma):
            sub = self.graph.subgraph(self.failures.edge_mask(t, h, self.trial))
            z = consensus_round(z, sub, self.params.delta)
        self.nodes = [replace(s, z=z[i], x_hat=z[i].copy()) for i, s in enumerate(self.nodes)]

    def run(self, outputs: Sequence[np.ndarray], steps: Optional[int] = None) -> np.ndarray:
        """Filter a trajectory's outputs; returns estimates (T+1, N, n)."""
        T = outputs[0].shape[0] if steps is None else steps + 1
        out = np.empty((T, self.plant.n_nodes, self.plant.n))
        out[0] = self.estimates
        for t in range(T - 1):
            self.step(t, [y[t + 1] for y in outputs])
            out[t + 1] = self.estimates
        return out


def dkf_step(network: DkfNetwork, t: int, ys: Sequence[np.ndarray]) -> DkfNetwork:
    network.step(t, ys)
    return network


def error_vector(network_or_estimates, x_true: np.ndarray) -> NetworkError:
    est = network_or_estimates.estimates if isinstance(network_or_estimates, DkfNetwork) else network_or_estimates
    est = np.asarray(est, dtype=float)
    x_true = np.asarray(x_true, dtype=float)
    if est.shape[-1] != x_true.shape[-1]:
        raise ValueError("state dimensions disagree")
    return NetworkError((x_true[None, :] - est).reshape(-1))


# --- vectorized Monte-Carlo driver ------------------------------------------

@dataclass
class BatchResult:
    """Per-trial outcome of :func:`run_batch`.

    ``sq_err`` is (S, T+1): squared network error norm summed over nodes.
    ``mean_err`` is (T+1, N*n): trial average of the stacked error.
    """

    sq_err: np.ndarray
    diverged: np.ndarray
    mean_err: np.ndarray
    estimates: Optional[np.ndarray] = None
    node_cov: Optional[np.ndarray] = None


def run_batch(plant: Plant, failures: LinkFailureModel, params: ConsensusParams,
              gains: Sequence[np.ndarray], states: np.ndarray, outputs: Sequence[np.ndarray],
              trials: Sequence[int], x_hat0=None, keep_estimates: bool = False,
              cov_burn_in: Optional[int] = None, threshold: float = DIVERGENCE_THRESHOLD,
              compiled: Optional[bool] = None) -> BatchResult:
    """Frozen-gain filter over S trials at once.

    ``states`` is (S, T+1, n) and ``outputs`` per-node (S, T+1, q_i), row t+1
    feeding the step from t to t+1. Trial ``k`` uses the consensus draws keyed
    by ``trials[k]``. A trial is marked diverged once its error norm exceeds
    ``threshold`` (or stops being finite); it is then frozen.
    """
    g = failures.base
    S, T1, n = states.shape
    N = plant.n_nodes
    trials = np.asarray(trials)
    inc = g.incidence
    A = plant.A
    sensors = [(i, plant.C[i], np.asarray(gains[i]).reshape(n, -1)) for i in range(N) if plant.C[i].shape[0]]
    x = np.zeros((S, N, n))
    if x_hat0 is not None:
        x[:] = np.asarray(x_hat0, dtype=float)
    diverged = np.zeros(S, dtype=bool)
    sq_err = np.empty((S, T1))
    mean_err = np.empty((T1, N * n))
    est = np.empty((S, T1, N, n)) if keep_estimates else None
    node_cov = np.zeros((N, n, n)) if cov_burn_in is not None else None
    cov_count = 0
    inv_delta = 1.0 / params.delta
    use_kernel = _kernels.consensus_rounds is not None if compiled is None else compiled
    if use_kernel and _kernels.consensus_rounds is None:
        raise RuntimeError("compiled averaging requested but numba is not installed")

    def record(t):
        nonlocal cov_count
        e = states[:, t, None, :] - x
        sq = np.einsum("snk,snk->s", e, e)
        bad = ~np.isfinite(sq) | (sq > threshold ** 2)
        diverged[:] |= bad
        sq_err[:, t] = np.where(diverged, np.nan, sq)
        ok = ~diverged
        mean_err[t] = e[ok].mean(axis=0).reshape(-1) if ok.any() else np.nan
        if est is not None:
            est[:, t] = x
        if node_cov is not None and t >= cov_burn_in and ok.any():
            node_cov[:] += np.einsum("sni,snj->nij", e[ok], e[ok])
            cov_count += int(ok.sum())

    with np.errstate(over="ignore", invalid="ignore"):
        record(0)
        for t in range(T1 - 1):
            z = x @ A.T
            for i, C, K in sensors:
                innov = outputs[i][:, t + 1, :] - z[:, i, :] @ C.T
                z[:, i, :] += innov @ K.T
            if params.gamma and use_kernel:
                z = _kernels.consensus_rounds(np.ascontiguousarray(z), g.edges, failures.seed, rng.CONSENSUS,
                                              trials, t, params.gamma, failures.p_beta, params.delta)
            elif params.gamma:
                beta = failures.edge_mask(t, np.arange(params.gamma)[:, None], trials[None, :]).astype(float)
                for h in range(params.gamma):
                    flow = beta[h][:, :, None] * np.einsum("ne,snk->sek", inc, z)
                    z = z - inv_delta * np.einsum("ne,sek->snk", inc, flow)
            x = np.where(diverged[:, None, None], x, z)
            record(t + 1)
    if node_cov is not None and cov_count:
        node_cov /= cov_count
    return BatchResult(sq_err, diverged, mean_err, est, node_cov)
