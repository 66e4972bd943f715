"""Broadcast Push-Sum with self-substitution of lost packets.

Every node keeps three accumulators (an n x n matrix, a count and a weight),
broadcasts them divided by its nominal closed-neighbourhood size and, for
each link that failed in the round, adds its own share in place of the
missing packet. The network-level update is left multiplication by the
column-stochastic ``theta_matrix(subgraph, base)``, so all three sums are
conserved under any failure pattern. The ratios accumulator/weight converge
to ``G = sum_i C_i^T R_i^{-1} C_i`` and to the node count.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Sequence

import numpy as np

from .graph import Graph, LinkFailureModel, is_connected, laplacian
from .model import Plant

WEIGHT_GUARD = 1e-14
DEFAULT_EPS = 1e-9
DEFAULT_PATIENCE = 3


@dataclass(frozen=True)
class PushSumNodeState:
    C_tilde: np.ndarray
    n_tilde: float
    w: float
    nu_bar: int
    stopped: bool = False
    eps: float = DEFAULT_EPS


@dataclass(frozen=True)
class GainEstimate:
    G_i: np.ndarray
    N_i: float


def init_pushsum(plant: Plant, g: Graph, leader: int = 0, eps: float = DEFAULT_EPS) -> List[PushSumNodeState]:
    if not 0 <= leader < g.n_nodes:
        raise ValueError(f"leader {leader} outside 0..{g.n_nodes - 1}")
    if plant.n_nodes != g.n_nodes:
        raise ValueError("plant and graph disagree on the node count")
    return [PushSumNodeState(plant.information[i].copy(), 1.0, 1.0 if i == leader else 0.0,
                             int(g.nu_bar[i]), False, eps)
            for i in range(g.n_nodes)]


def pushsum_round(states: Sequence[PushSumNodeState], subgraph: Graph, base: Graph) -> List[PushSumNodeState]:
    """One synchronous round over the surviving ``subgraph`` of ``base``.

    A stopped node neither sends nor updates: its neighbours see the link as
    failed and substitute their own share, so all three sums stay conserved.
    """
    alive = {(i, j) for i, j in subgraph.edges if not (states[i].stopped or states[j].stopped)}
    if not alive <= set(base.edges):
        raise ValueError("sub-graph has edges outside the base graph")
    shares = [(s.C_tilde / s.nu_bar, s.n_tilde / s.nu_bar, s.w / s.nu_bar) for s in states]
    out = []
    for i, s in enumerate(states):
        if s.stopped:
            out.append(s)
            continue
        C, n, w = shares[i]
        C, n, w = C.copy(), n, w
        for j in base.neighbors[i]:
            src = j if (min(i, j), max(i, j)) in alive else i
            C += shares[src][0]
            n += shares[src][1]
            w += shares[src][2]
        out.append(replace(s, C_tilde=C, n_tilde=n, w=w))
    return out


def gain_estimate(s: PushSumNodeState, C_i: np.ndarray, R_i: np.ndarray) -> GainEstimate:
    if abs(s.w) > WEIGHT_GUARD:
        return GainEstimate(s.C_tilde / s.w, s.n_tilde / s.w)
    C_i = np.atleast_2d(C_i)
    n = s.C_tilde.shape[0]
    if C_i.size == 0:
        return GainEstimate(np.zeros((n, n)), 1.0)
    return GainEstimate(C_i.T @ np.linalg.solve(np.atleast_2d(R_i), C_i), 1.0)


def stop_check(s: PushSumNodeState, prev_C_tilde: np.ndarray) -> bool:
    """Non-zero accumulator whose last change is below ``eps`` (spectral norm)."""
    if np.linalg.norm(s.C_tilde, 2) <= 0.0:
        return False
    return bool(np.linalg.norm(s.C_tilde - prev_C_tilde, 2) < s.eps)


def pushsum_limits_oracle(plant: Plant, g: Graph):
    """Failure-free limits ``nu_bar_i / sum(nu_bar) * (G, N, 1)`` per node."""
    if not is_connected(g):
        raise ValueError("closed-form limits need a connected graph")
    frac = g.nu_bar / g.nu_bar.sum()
    return [(f * plant.G, f * plant.n_nodes, float(f)) for f in frac]


class PushSumNetwork:
    """Drives the node-level protocol over a failure model.

    A node evaluates the stop rule only after rounds in which it heard from
    at least one neighbour; in a round where every incident link failed its
    accumulator is unchanged by construction. A round counts as quiet when
    :func:`stop_check` passes and the count and weight also moved by less
    than ``eps``; the node stops after ``patience`` consecutive quiet rounds.
    ``patience=1, full_state=False`` is the bare single-round rule, which
    stops nodes early whenever a neighbour's share happens to equal their own.
    A node whose neighbours have all stopped stops too.
    """

    def __init__(self, plant: Plant, failures: LinkFailureModel, leader: int = 0,
                 eps: float = DEFAULT_EPS, trial: int = 0, patience: int = DEFAULT_PATIENCE,
                 full_state: bool = True):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.full_state = full_state
        self.quiet = np.zeros(failures.base.n_nodes, dtype=int)
        self.plant = plant
        self.failures = failures
        self.base = failures.base
        self.trial = trial
        self.states = init_pushsum(plant, self.base, leader, eps)
        self.t = 0

    @property
    def all_stopped(self) -> bool:
        return all(s.stopped for s in self.states)

    def step(self) -> None:
        mask = self.failures.edge_mask(self.t, None, self.trial)
        sub = self.base.subgraph(mask)
        prev = self.states
        new = pushsum_round(prev, sub, self.base)
        heard = np.zeros(self.base.n_nodes, dtype=bool)
        for (i, j), keep in zip(self.base.edges, mask):
            if keep and not (prev[i].stopped or prev[j].stopped):
                heard[i] = heard[j] = True
        out = []
        for i, (s, p) in enumerate(zip(new, prev)):
            if s.stopped or not heard[i]:
                out.append(s)
                continue
            quiet = stop_check(s, p.C_tilde)
            if self.full_state:
                quiet = quiet and abs(s.n_tilde - p.n_tilde) < s.eps and abs(s.w - p.w) < s.eps
            self.quiet[i] = self.quiet[i] + 1 if quiet else 0
            out.append(replace(s, stopped=True) if self.quiet[i] >= self.patience else s)
        # nothing can reach a node whose neighbours are all silent, so its state is final
        for i, nb in enumerate(self.base.neighbors):
            if not out[i].stopped and all(out[j].stopped for j in nb):
                out[i] = replace(out[i], stopped=True)
        self.states = out
        self.t += 1

    def run(self, max_rounds: int, until_stopped: bool = True) -> int:
        for _ in range(max_rounds):
            if until_stopped and self.all_stopped:
                break
            self.step()
        return self.t

    def estimates(self) -> List[GainEstimate]:
        return [gain_estimate(s, c, r) for s, c, r in zip(self.states, self.plant.C, self.plant.R)]


def pushsum_batch(values: np.ndarray, failures: LinkFailureModel, rounds: int,
                  trials: Sequence[int], record: bool = False):
    """Run the failure-tolerant iteration on many trials at once.

    ``values`` has shape (N, k): k scalar quantities per node (flattened
    accumulators, counts, weights). Returns the final (S, N, k) array and, if
    ``record``, the per-round column sums (rounds, S, k) for conservation checks.
    No stop rule is applied.
    """
    g = failures.base
    inc = g.incidence
    inv_nu = 1.0 / g.nu_bar.astype(float)
    trials = np.asarray(trials)
    x = np.broadcast_to(values, (len(trials),) + values.shape).copy()
    sums = []
    for t in range(rounds):
        beta = failures.edge_mask(t, None, trials).astype(float)
        share = x * inv_nu[None, :, None]
        flow = beta[:, :, None] * np.einsum("ne,snk->sek", inc, share)
        x = x - np.einsum("ne,sek->snk", inc, flow)
        if record:
            sums.append(x.sum(axis=1))
    return (x, np.array(sums)) if record else x


def pushsum_values(plant: Plant, leader: int = 0) -> np.ndarray:
    """Initial (N, n*n + 2) array: flattened accumulator, count, weight."""
    N, n = plant.n_nodes, plant.n
    w = np.zeros(N)
    w[leader] = 1.0
    return np.hstack([plant.information.reshape(N, n * n), np.ones((N, 1)), w[:, None]])


def expected_theta(g: Graph, p_beta: float) -> np.ndarray:
    """Mean iteration matrix ``I - p_beta L (I + D)^{-1}``."""
    return np.eye(g.n_nodes) - p_beta * laplacian(g) / g.nu_bar[None, :].astype(float)
