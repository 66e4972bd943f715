"""Undirected topologies, Laplacians and random link-failure sub-graphs."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cached_property
from itertools import product
from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from . import rng

SYMMETRY_TOL = 1e-12


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Graph:
    """Undirected simple graph on nodes ``0..n_nodes-1``.

    ``edges`` holds each undirected edge once as ``(min, max)``, sorted
    lexicographically; this order is also the order of the failure draws.
    """

    n_nodes: int
    edges: Tuple[Tuple[int, int], ...]

    @cached_property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_nodes, self.n_nodes))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    @cached_property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(int)

    @property
    def nu_bar(self) -> np.ndarray:
        return self.degrees + 1

    @cached_property
    def neighbors(self) -> Tuple[Tuple[int, ...], ...]:
        nbrs = [[] for _ in range(self.n_nodes)]
        for i, j in self.edges:
            nbrs[i].append(j)
            nbrs[j].append(i)
        return tuple(tuple(sorted(x)) for x in nbrs)

    @cached_property
    def incidence(self) -> np.ndarray:
        """N x E matrix with +1 at the lower endpoint and -1 at the upper one."""
        inc = np.zeros((self.n_nodes, self.n_edges))
        for e, (i, j) in enumerate(self.edges):
            inc[i, e] = 1.0
            inc[j, e] = -1.0
        return inc

    @cached_property
    def edge_laplacians(self) -> np.ndarray:
        """Stack of single-edge Laplacians, shape (E, N, N)."""
        inc = self.incidence
        return np.einsum("ne,me->enm", inc, inc)

    def subgraph(self, mask: Sequence[bool]) -> "Graph":
        return Graph(self.n_nodes, tuple(e for e, keep in zip(self.edges, mask) if keep))

    def to_text(self) -> str:
        lines = [f"{self.n_nodes} {self.n_edges}"]
        lines += [f"{i} {j}" for i, j in self.edges]
        return "\n".join(lines) + "\n"


def build_graph(n: int, edges: Iterable[Tuple[int, int]]) -> Graph:
    """Validate an edge list and build a :class:`Graph`.

    Raises :class:`GraphError` for out-of-range endpoints, self-loops and
    duplicate edges (in either orientation).
    """
    if n < 1:
        raise GraphError(f"node count must be >= 1, got {n}")
    seen = set()
    for e in edges:
        i, j = (int(x) for x in e)
        if not (0 <= i < n and 0 <= j < n):
            raise GraphError(f"edge ({i}, {j}) has an endpoint outside 0..{n - 1}")
        if i == j:
            raise GraphError(f"self-loop at node {i}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise GraphError(f"duplicate edge {key}")
        seen.add(key)
    return Graph(n, tuple(sorted(seen)))


def read_edge_list(path) -> Graph:
    """Parse the ``N M`` header + ``i j`` lines format (0-based)."""
    text = Path(path).read_text()
    rows = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not rows or len(rows[0]) != 2:
        raise GraphError(f"{path}: first line must be 'N M'")
    n, m = int(rows[0][0]), int(rows[0][1])
    body = rows[1:]
    if len(body) != m:
        raise GraphError(f"{path}: header announces {m} edges, found {len(body)}")
    edges = []
    for k, r in enumerate(body, start=2):
        if len(r) != 2:
            raise GraphError(f"{path}: line {k}: expected 'i j'")
        edges.append((int(r[0]), int(r[1])))
    return build_graph(n, edges)


def write_edge_list(g: Graph, path) -> None:
    Path(path).write_text(g.to_text())


# Ring 0-1-...-9-0 plus seven chords; 17 edges, max degree 4.
DEFAULT_CHORDS = ((0, 5), (1, 4), (2, 7), (3, 8), (6, 9), (1, 6), (4, 8))


def default_topology() -> Graph:
    """The shipped 10-node, 17-edge connected topology."""
    ring = [(i, (i + 1) % 10) for i in range(10)]
    return build_graph(10, ring + list(DEFAULT_CHORDS))


def path_graph(n: int) -> Graph:
    return build_graph(n, [(i, i + 1) for i in range(n - 1)])


def complete_graph(n: int) -> Graph:
    return build_graph(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


def laplacian(g: Graph) -> np.ndarray:
    """Graph Laplacian ``D - A``."""
    return np.diag(g.degrees.astype(float)) - g.adjacency


def is_connected(g: Graph) -> bool:
    """BFS from node 0."""
    seen = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in g.neighbors[i]:
            if j not in seen:
                seen.add(j)
                queue.append(j)
    return len(seen) == g.n_nodes


def connected_mask(g: Graph, masks: np.ndarray) -> np.ndarray:
    """Connectivity of many sub-graphs of ``g`` at once.

    ``masks`` is a boolean (S, E) array of retained edges. Uses the reachability
    closure of ``I + A(omega)`` by repeated squaring.
    """
    masks = np.atleast_2d(masks)
    n = g.n_nodes
    inc = np.abs(g.incidence)
    out = np.empty(len(masks), dtype=bool)
    for start in range(0, len(masks), 20000):
        m = masks[start:start + 20000].astype(float)
        # A(omega) = |inc| diag(m) |inc|^T minus the degree diagonal
        reach = np.einsum("ne,se,me->snm", inc, m, inc)
        reach = (reach > 0).astype(float)
        reach[:, np.arange(n), np.arange(n)] = 1.0
        steps = 1
        while steps < n - 1:
            reach = (reach @ reach > 0).astype(float)
            steps *= 2
        out[start:start + 20000] = reach[:, 0, :].all(axis=1)
    return out


# --- symmetric eigen-solver -------------------------------------------------

def jacobi_eigh(m: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Cyclic Jacobi rotations for a small dense symmetric matrix.

    Returns ``(eigenvalues, eigenvectors)`` with eigenvalues ascending.
    Stops when the off-diagonal Frobenius norm drops below ``tol * ||m||_F``.
    """
    a = np.array(m, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    scale = np.linalg.norm(a)
    if scale == 0.0 or n == 1:
        return np.diag(a).copy(), v
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off < tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) < 1e-300:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau)) if tau != 0 else 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                rot = np.array([[c, s], [-s, c]])
                idx = [p, q]
                a[:, idx] = a[:, idx] @ rot
                a[idx, :] = rot.T @ a[idx, :]
                v[:, idx] = v[:, idx] @ rot
    else:
        raise np.linalg.LinAlgError("Jacobi sweeps did not converge")
    w = np.diag(a).copy()
    order = np.argsort(w)
    return w[order], v[:, order]


def check_symmetric(m: np.ndarray, tol: float = SYMMETRY_TOL) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if np.max(np.abs(m - m.T), initial=0.0) > tol * max(1.0, np.max(np.abs(m), initial=0.0)):
        raise ValueError("matrix is not symmetric")
    return m


def spectrum(m: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of a symmetric matrix (Jacobi)."""
    return jacobi_eigh(check_symmetric(m))[0]


def spectral_radius_laplacian(g: Graph) -> float:
    return float(spectrum(laplacian(g))[-1])


def theta_matrix(g: Graph, base: Optional[Graph] = None) -> np.ndarray:
    """Column-stochastic Push-Sum iteration matrix.

    With ``base`` omitted this is ``(I + A)(I + D)^{-1}``. When ``g`` is a
    failure sub-graph of ``base``, missing packets are replaced by the node's
    own share, giving ``I - L(g) (I + D_base)^{-1}``.
    """
    base = g if base is None else base
    return np.eye(g.n_nodes) - laplacian(g) / base.nu_bar[None, :].astype(float)


def orthonormal_complement(n: int) -> np.ndarray:
    """Orthonormal basis (N x N-1) of the complement of ``1/sqrt(N)``.

    Normalized Helmert columns: column k is ``(1, ..., 1, -k, 0, ...)/sqrt(k(k+1))``.
    """
    if n < 2:
        raise ValueError("orthonormal complement needs N >= 2")
    w = np.zeros((n, n - 1))
    for k in range(1, n):
        w[:k, k - 1] = 1.0
        w[k, k - 1] = -float(k)
        w[:, k - 1] /= np.sqrt(k * (k + 1.0))
    return w


# --- link failures ----------------------------------------------------------

@dataclass(frozen=True)
class LinkFailureModel:
    """Independent symmetric Bernoulli(p_beta) survival of every base edge.

    Draws are keyed by ``(seed, stream, trial, t, h, edge)``; Push-Sum rounds
    use ``h = None`` and their own stream so the two failure processes never
    share draws.
    """

    base: Graph
    p_beta: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p_beta <= 1.0:
            raise ValueError(f"p_beta must lie in [0, 1], got {self.p_beta}")

    def edge_uniforms(self, t, h=None, trial=0) -> np.ndarray:
        """Uniforms with trailing edge axis; t, h, trial broadcast against each other."""
        stream = rng.PUSHSUM if h is None else rng.CONSENSUS
        hh = rng.NO_SUBROUND if h is None else h
        t, hh, trial = (np.asarray(x)[..., None] for x in (t, hh, trial))
        e = np.arange(self.base.n_edges)
        return rng.uniforms(self.seed, stream, trial, t, hh, e)

    def edge_mask(self, t, h=None, trial=0) -> np.ndarray:
        return self.edge_uniforms(t, h, trial) < self.p_beta

    def sample_laplacian(self, t, h=None, trial=0) -> np.ndarray:
        mask = self.edge_mask(t, h, trial).astype(float)
        return np.einsum("...e,enm->...nm", mask, self.base.edge_laplacians)


def sample_subgraph(m: LinkFailureModel, round_key, trial: int = 0) -> Graph:
    """Surviving sub-graph for ``round_key = (t, h)``; ``h=None`` for Push-Sum rounds."""
    t, h = round_key
    return m.base.subgraph(m.edge_mask(t, h, trial))


def estimate_disconnection_probability(m: LinkFailureModel, trials: int = 100_000,
                                       exhaustive_limit: int = 12):
    """Probability that one round's surviving sub-graph is disconnected.

    Exact enumeration of all ``2^|E|`` edge subsets when ``|E| <= exhaustive_limit``
    (half-width 0), otherwise a Monte-Carlo estimate over ``trials`` rounds with
    a 95% normal-approximation half-width. Returns ``(p_d, half_width)``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    g = m.base
    if g.n_edges <= exhaustive_limit:
        masks = np.array(list(product([False, True], repeat=g.n_edges)), dtype=bool).reshape(-1, g.n_edges)
        k = masks.sum(axis=1)
        weights = m.p_beta ** k * (1.0 - m.p_beta) ** (g.n_edges - k)
        disconnected = ~connected_mask(g, masks)
        return float(np.sum(weights[disconnected])), 0.0
    u = rng.uniforms(m.seed, rng.DISCONNECTION, np.arange(trials)[:, None], np.arange(g.n_edges))
    masks = u < m.p_beta
    p_hat = float(np.mean(~connected_mask(g, masks)))
    return p_hat, 1.96 * np.sqrt(p_hat * (1.0 - p_hat) / trials)
