"""Spectral stability toolkit for the lossy consensus filter.

Covers the transformed coordinates that split network-average and
disagreement dynamics, expected consensus matrices (by formula, exact
enumeration and Monte-Carlo), weighted operator norms, the 2x2 and 4x4
bound matrices and the minimal number of consensus steps they certify, and
second-moment (Kronecker square) stability checks for random linear
recursions.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from itertools import product
from typing import Callable, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .graph import (Graph, LinkFailureModel, check_symmetric, estimate_disconnection_probability,
                    laplacian, orthonormal_complement, spectral_radius_laplacian, spectrum)
from .model import CentralizedSolution, Plant

EIG_FLOOR = 1e-14


class AnalysisError(ValueError):
    pass


# --- generic linear algebra -------------------------------------------------

def spectral_radius(m: np.ndarray) -> float:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape == (2, 2):
        return _rho_2x2(m)
    return float(np.max(np.abs(np.linalg.eigvals(m))))


def _rho_2x2(m):
    tr = m[0, 0] + m[1, 1]
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    disc = tr * tr / 4 - det
    if disc >= 0:
        r = math.sqrt(disc)
        return max(abs(tr / 2 + r), abs(tr / 2 - r))
    return math.sqrt(det)


def power_iteration(m: np.ndarray, tol: float = 1e-12, max_iter: int = 100_000) -> float:
    """Dominant eigenvalue modulus of a non-negative matrix by power iteration."""
    m = np.asarray(m, dtype=float)
    x = np.ones(m.shape[0]) / np.sqrt(m.shape[0])
    lam = 0.0
    for _ in range(max_iter):
        y = m @ x
        nrm = np.linalg.norm(y)
        if nrm == 0.0:
            return 0.0
        y /= nrm
        if abs(nrm - lam) < tol * max(1.0, nrm) and np.linalg.norm(y - x) < 1e-9:
            return float(nrm)
        x, lam = y, nrm
    raise AnalysisError(f"power iteration did not converge (last estimate {lam})")


def inv_sqrt_pd(M: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((M + M.T) / 2)
    return (v / np.sqrt(np.maximum(w, EIG_FLOOR))) @ v.T


def weighted_norm(Nmat: np.ndarray, M: np.ndarray) -> float:
    """Operator norm induced by ``<z, z>_M = z^T M z``.

    Equals ``sqrt(rho(M^{-1/2} N^T M N M^{-1/2}))``.
    """
    M = check_symmetric(M, tol=1e-9)
    if np.min(np.linalg.eigvalsh(M)) <= 0:
        raise AnalysisError("weight matrix must be positive definite")
    Nmat = np.atleast_2d(np.asarray(Nmat, dtype=float))
    Mi = inv_sqrt_pd(M)
    inner = Mi @ Nmat.T @ M @ Nmat @ Mi
    return float(np.sqrt(max(np.max(np.linalg.eigvalsh((inner + inner.T) / 2)), 0.0)))


# --- transformed coordinates ------------------------------------------------

@dataclass(frozen=True)
class TransformBasis:
    v: np.ndarray
    W: np.ndarray
    T: np.ndarray

    @classmethod
    def of(cls, N: int) -> "TransformBasis":
        v = np.ones((N, 1)) / np.sqrt(N)
        W = orthonormal_complement(N)
        return cls(v, W, np.hstack([v, W]))

    def coords(self, n: int) -> np.ndarray:
        """``(v W) kron I_n``."""
        return np.kron(self.T, np.eye(n))


# --- Lyapunov rate and coupling constant ------------------------------------

def lyapunov_rate(A_C: np.ndarray, P_inf: np.ndarray) -> float:
    """Smallest ``lam`` with ``A_C P A_C^T <= lam P``.

    Raises :class:`AnalysisError` when ``lam >= 1``.
    """
    P = (P_inf + P_inf.T) / 2 + 1e-12 * np.eye(P_inf.shape[0])
    Pi = inv_sqrt_pd(P)
    m = Pi @ A_C @ P @ A_C.T @ Pi
    lam = float(np.max(np.linalg.eigvalsh((m + m.T) / 2)))
    if lam >= 1.0:
        raise AnalysisError(f"Lyapunov rate {lam} >= 1: A_C is not contractive in the P_inf norm")
    return lam


def coupling_constant(plant: Plant, sol: CentralizedSolution) -> float:
    """``(1 + N ||P_inf|| ||G||_P) ||A||_P`` with ``P = P_inf`` weights."""
    P = sol.P_inf
    return (1.0 + sol.N * np.linalg.norm(P, 2) * weighted_norm(sol.G, P)) * weighted_norm(plant.A, P)


def theta_values(p_beta: float, p_d: float, delta: float, N: int) -> Tuple[float, float]:
    """Contraction factors for the average disagreement and its second moment."""
    if not 0.0 < p_beta <= 1.0:
        raise AnalysisError(f"p_beta must lie in (0, 1], got {p_beta}")
    if not 0.0 <= p_d < 1.0:
        raise AnalysisError(f"p_d must lie in [0, 1), got {p_d}")
    if delta <= 0 or N < 2:
        raise AnalysisError("need delta > 0 and N >= 2")
    th = 1.0 - p_beta / delta * (1.0 - math.cos(math.pi / N))
    return th, (1.0 - p_d) * th * th + p_d


def bound_matrix_AR(gamma: float, lam: float, c_B: float, theta_pbeta: float):
    """2x2 mean-error bound matrix and its spectral radius."""
    tg = theta_pbeta ** gamma
    m = np.array([[math.sqrt(lam), tg * c_B], [c_B, tg * c_B]])
    return m, _rho_2x2(m)


def bound_matrix_AS(gamma: float, lam: float, c_B: float, theta_pbeta: float, theta_pd: float):
    """4x4 mean-square bound matrix (entries as published) and its radius."""
    s = math.sqrt(lam)
    tb = theta_pbeta ** gamma
    td = theta_pd ** gamma
    c2 = c_B * c_B
    m = np.array([
        [lam, c_B * s, c_B * s, c2],
        [c_B * tb * s, c_B * tb * s, c2 * tb, c2 * tb],
        [c_B * tb * s, c2 * tb, c_B * tb * s, c2 * tb],
        [c2 * td, c2 * td, c2 * td, c2 * td],
    ])
    return m, spectral_radius(m)


def _first_gamma(pred, gamma_max):
    """Smallest integer gamma >= 1 with ``pred(gamma)``, pred monotone in gamma."""
    if pred(1):
        return 1
    hi = 2
    while not pred(hi):
        if hi >= gamma_max:
            return None
        hi = min(2 * hi, gamma_max)
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi


def closed_form_gamma(lam: float, c_B: float, theta_pbeta: float) -> int:
    """Smallest integer gamma >= 1 with ``theta^gamma < ((1 - sqrt(lam)) / c_B)^2``."""
    rhs = ((1.0 - math.sqrt(lam)) / c_B) ** 2
    if theta_pbeta < rhs or rhs >= 1.0:
        return 1
    g = max(1, math.ceil(math.log(rhs) / math.log(theta_pbeta)))
    while theta_pbeta ** g >= rhs:
        g += 1
    while g > 1 and theta_pbeta ** (g - 1) < rhs:
        g -= 1
    return g


def closed_form_condition_holds(gamma: int, lam: float, c_B: float, theta_pbeta: float) -> bool:
    return theta_pbeta ** gamma < ((1.0 - math.sqrt(lam)) / c_B) ** 2


def minimal_gamma(lam: float, c_B: float, theta_pbeta: float, theta_pd: float,
                  gamma_max: int = 10 ** 7):
    """``(gamma_min_mean, gamma_min_ms, gamma_closed_form)``; None if beyond gamma_max."""
    if not (lam < 1 and theta_pbeta < 1 and theta_pd < 1):
        raise AnalysisError("need lam < 1 and both thetas < 1")
    g_mean = _first_gamma(lambda g: bound_matrix_AR(g, lam, c_B, theta_pbeta)[1] < 1.0, gamma_max)
    g_ms = _first_gamma(lambda g: bound_matrix_AS(g, lam, c_B, theta_pbeta, theta_pd)[1] < 1.0, gamma_max)
    return g_mean, g_ms, closed_form_gamma(lam, c_B, theta_pbeta)


# --- expected consensus matrices --------------------------------------------

def consensus_matrix(L: np.ndarray, delta: float) -> np.ndarray:
    return np.eye(L.shape[-1]) - L / delta


def expected_M(graph: Graph, p_beta: float, delta: float, gamma: int):
    """``(I - p_beta/delta L)^gamma`` and its eigenvalues ``(1 - p_beta/delta lam_i)^gamma``."""
    if delta <= 0:
        raise AnalysisError("delta must be positive")
    L = laplacian(graph)
    M1 = consensus_matrix(p_beta * L, delta)
    lam = spectrum(L)
    return np.linalg.matrix_power(M1, gamma), np.sort((1.0 - p_beta / delta * lam) ** gamma)


def sample_M(failures: LinkFailureModel, delta: float, gamma: int, t=0, trial=0) -> np.ndarray:
    """Product ``M_{gamma-1} ... M_0`` of one time step's consensus rounds.

    ``t``/``trial`` may be arrays; leading axes broadcast.
    """
    N = failures.base.n_nodes
    t = np.asarray(t)
    trial = np.asarray(trial)
    shape = np.broadcast_shapes(t.shape, trial.shape)
    out = np.broadcast_to(np.eye(N), shape + (N, N)).copy()
    for h in range(gamma):
        L = failures.sample_laplacian(t, h, trial)
        out = consensus_matrix(L, delta) @ out
    return out


def s_matrices(graph: Graph, subgraph: Graph, delta: float, W: Optional[np.ndarray] = None,
               p_beta: float = 1.0):
    """Disagreement-space matrices ``S(omega) = I - W^T L(omega) W / delta`` and ``S_bar``."""
    rho = spectral_radius_laplacian(graph)
    if delta <= rho:
        raise AnalysisError(f"delta={delta} must exceed rho(L)={rho}")
    W = orthonormal_complement(graph.n_nodes) if W is None else W
    S = np.eye(graph.n_nodes - 1) - W.T @ laplacian(subgraph) @ W / delta
    S_bar = np.eye(graph.n_nodes - 1) - p_beta * W.T @ laplacian(graph) @ W / delta
    return (S + S.T) / 2, (S_bar + S_bar.T) / 2


def round_law(graph: Graph, p_beta: float) -> List[Tuple[float, np.ndarray]]:
    """All ``2^|E|`` single-round Laplacians with their probabilities."""
    E = graph.n_edges
    if E > 20:
        raise AnalysisError(f"exhaustive enumeration of {E} edges is too large")
    out = []
    for mask in product([0.0, 1.0], repeat=E):
        m = np.array(mask)
        k = int(m.sum())
        out.append((p_beta ** k * (1.0 - p_beta) ** (E - k),
                    np.einsum("e,enm->nm", m, graph.edge_laplacians)))
    return out


def expected_kron_M1(graph: Graph, p_beta: float, delta: float) -> np.ndarray:
    """Closed form of ``E[M kron M]`` for one round ``M = I - L(omega)/delta``.

    Uses ``E[beta_e beta_f] = p^2`` for distinct edges and ``p`` for ``e = f``.
    """
    N = graph.n_nodes
    I = np.eye(N)
    L = laplacian(graph)
    Le = graph.edge_laplacians
    second = p_beta ** 2 * np.kron(L, L)
    if len(Le):
        second += (p_beta - p_beta ** 2) * np.einsum("eij,ekl->ikjl", Le, Le).reshape(N * N, N * N)
    return np.kron(I, I) - p_beta / delta * (np.kron(L, I) + np.kron(I, L)) + second / delta ** 2


def expected_kron_M(graph: Graph, p_beta: float, delta: float, gamma: int) -> np.ndarray:
    """``E[M^(gamma) kron M^(gamma)]`` (rounds are independent)."""
    return np.linalg.matrix_power(expected_kron_M1(graph, p_beta, delta), gamma)


def expected_kron_S(graph: Graph, p_beta: float, delta: float, gamma: int,
                    method: str = "formula") -> np.ndarray:
    """``E[S^(gamma) kron S^(gamma)]`` by formula or by exhaustive enumeration."""
    W = orthonormal_complement(graph.n_nodes)
    WW = np.kron(W, W)
    if method == "formula":
        one = WW.T @ expected_kron_M1(graph, p_beta, delta) @ WW
    elif method == "enumerate":
        one = np.zeros(((graph.n_nodes - 1) ** 2,) * 2)
        for prob, L in round_law(graph, p_beta):
            S = np.eye(graph.n_nodes - 1) - W.T @ L @ W / delta
            one += prob * np.kron(S, S)
    else:
        raise ValueError(f"unknown method {method!r}")
    return np.linalg.matrix_power(one, gamma)


# --- error dynamics ----------------------------------------------------------

def local_closed_loops(plant: Plant, gains: Sequence[np.ndarray]) -> np.ndarray:
    """``A_i = (I - K_i C_i) A`` stacked (N, n, n)."""
    n = plant.n
    return np.array([(np.eye(n) - np.asarray(k).reshape(n, -1) @ c) @ plant.A
                     for k, c in zip(gains, plant.C)])


def error_transition(plant: Plant, gains: Sequence[np.ndarray], M: np.ndarray) -> np.ndarray:
    """``(M kron I_n) diag(A_i)`` for one realization of the consensus product."""
    n = plant.n
    Ai = local_closed_loops(plant, gains)
    N = plant.n_nodes
    blk = np.zeros((N * n, N * n))
    for i in range(N):
        blk[i * n:(i + 1) * n, i * n:(i + 1) * n] = Ai[i]
    return np.kron(M, np.eye(n)) @ blk


def noise_terms(plant: Plant, gains: Sequence[np.ndarray], f: np.ndarray, g: Sequence[np.ndarray]) -> np.ndarray:
    """Stacked ``(I - K_i C_i) f - K_i g_i`` (leading batch axes allowed)."""
    n = plant.n
    out = []
    for k, c, gi in zip(gains, plant.C, g):
        k = np.asarray(k).reshape(n, -1)
        term = f @ (np.eye(n) - k @ c).T
        if c.shape[0]:
            term = term - gi @ k.T
        out.append(term)
    return np.concatenate(out, axis=-1)


def transformed_error_matrix(plant: Plant, gains: Sequence[np.ndarray], M: np.ndarray) -> np.ndarray:
    """``H = T^T A_G T`` with ``T = (v W) kron I_n``."""
    Tc = TransformBasis.of(plant.n_nodes).coords(plant.n)
    return Tc.T @ error_transition(plant, gains, M) @ Tc


def expected_error_kron(plant: Plant, gains: Sequence[np.ndarray], graph: Graph, p_beta: float,
                        delta: float, gamma: int) -> np.ndarray:
    """Exact ``E[A_G kron A_G]`` from the closed-form second moments of M.

    Similar (through the orthogonal ``T kron T``) to ``E[H kron H]``.
    """
    N, n = plant.n_nodes, plant.n
    E2 = expected_kron_M(graph, p_beta, delta, gamma).reshape(N, N, N, N)  # [i, k, j, l]
    Ai = local_closed_loops(plant, gains)
    big = np.einsum("ikjl,jab,lcd->iakcjbld", E2, Ai, Ai)
    return big.reshape((N * n) ** 2, (N * n) ** 2)


def second_moment_growth(plant: Plant, gains: Sequence[np.ndarray], graph: Graph, p_beta: float,
                         delta: float, gamma: int, iters: int = 3000, tol: float = 1e-10) -> float:
    """Spectral radius of ``P -> E[A_G P A_G^T]`` by power iteration on the PSD cone.

    Cheaper than an eigen-solve of :func:`expected_error_kron`; the dominant
    eigenvalue of this positive map is real with a PSD eigenvector.
    """
    N, n = plant.n_nodes, plant.n
    E2 = expected_kron_M(graph, p_beta, delta, gamma).reshape(N, N, N, N)
    Ai = local_closed_loops(plant, gains)
    P = np.eye(N * n).reshape(N, n, N, n)
    r_prev = 0.0
    r = 0.0
    for _ in range(iters):
        Y = np.einsum("jab,jblc,ldc->jald", Ai, P, Ai)
        P = np.einsum("ikjl,jald->iakd", E2, Y)
        r = np.sqrt(np.sum(P * P))
        P /= r
        if abs(r - r_prev) < tol * r:
            break
        r_prev = r
    return float(r)


def fig2_layout(H_samples: Iterable[Tuple[float, np.ndarray]], n: int) -> np.ndarray:
    """Assemble ``E[H^[2]]`` in the 4x4 block layout from weighted samples of H.

    Block (r1 r2, c1 c2) is ``E[H_{r1 c1} kron H_{r2 c2}]`` with blocks ordered
    (11, 12, 21, 22); cross blocks use the same draw, so dependence inside one
    consensus product is kept. The result is permutation-similar to ``E[H kron H]``.
    """
    out = None
    for w, H in H_samples:
        blocks = {(1, 1): H[:n, :n], (1, 2): H[:n, n:], (2, 1): H[n:, :n], (2, 2): H[n:, n:]}
        order = [(1, 1), (1, 2), (2, 1), (2, 2)]
        rows = []
        for r1, r2 in order:
            rows.append([np.kron(blocks[(r1, c1)], blocks[(r2, c2)]) for c1, c2 in order])
        m = w * np.block(rows)
        out = m if out is None else out + m
    return out


# --- random-matrix second-moment checker --------------------------------------

Sampler = Union[Callable[[int], np.ndarray], Sequence[Tuple[float, np.ndarray]]]


@dataclass
class KronRadius:
    rho: float
    stderr: float
    draws: int
    mode: str


def kron_square_radius(sampler: Sampler, mode: str = "montecarlo", budget: int = 10_000) -> KronRadius:
    """Spectral radius of ``E[X kron X]`` for a random matrix source.

    ``mode="exact"`` takes a finite law as ``[(probability, matrix), ...]``;
    ``mode="montecarlo"`` calls ``sampler(k)`` for ``k < budget`` and also
    reports a batch-means standard error of the radius.
    """
    if mode == "exact":
        law = list(sampler)
        total = sum(p for p, _ in law)
        if abs(total - 1.0) > 1e-9:
            raise AnalysisError(f"probabilities sum to {total}")
        acc = sum(p * np.kron(x, x) for p, x in law)
        return KronRadius(spectral_radius(acc), 0.0, len(law), mode)
    if mode != "montecarlo":
        raise ValueError(f"unknown mode {mode!r}")
    if budget < 2:
        raise AnalysisError("Monte-Carlo mode needs a budget of at least 2 draws")
    n_batches = 10 if budget >= 20 else 2
    size = budget // n_batches
    parts = []
    total = None
    k = 0
    for b in range(n_batches):
        acc = None
        for _ in range(size):
            x = np.asarray(sampler(k), dtype=float)
            kk = np.kron(x, x)
            acc = kk if acc is None else acc + kk
            k += 1
        parts.append(spectral_radius(acc / size))
        total = acc if total is None else total + acc
    rho = spectral_radius(total / (size * n_batches))
    if not np.isfinite(rho):
        raise AnalysisError("non-finite Kronecker-square estimate; check the sampler")
    return KronRadius(rho, float(np.std(parts, ddof=1) / np.sqrt(n_batches)), k, mode)


def noise_covariance_limit(plant: Plant, sol: CentralizedSolution) -> np.ndarray:
    """Limit in gamma of the transformed noise covariance: only the top-left n x n block survives."""
    n, N = plant.n, plant.n_nodes
    C = plant.C_stacked
    IKC = np.eye(n) - sol.K_inf @ C
    blk = IKC @ plant.Q @ IKC.T
    if C.shape[0]:
        blk = blk + sol.P_inf @ C.T @ np.linalg.solve(plant.R_stacked, C @ sol.P_inf)
    out = np.zeros((N * n, N * n))
    out[:n, :n] = N * blk
    return out


# --- report -----------------------------------------------------------------

@dataclass
class BoundsReport:
    p_beta: float
    p_d: float
    p_d_halfwidth: float
    delta: float
    rho_L: float
    lambda_: float
    c_B: float
    theta_pbeta: float
    theta_pd: float
    gamma_min_mean: Optional[int]
    gamma_min_ms: Optional[int]
    gamma_closed_form: int
    closed_form_implies_AR: bool

    def as_dict(self):
        d = asdict(self)
        d["lambda"] = d.pop("lambda_")
        return d

    def to_text(self) -> str:
        return "\n".join(f"{k} = {v}" for k, v in self.as_dict().items()) + "\n"


def bounds_report(plant: Plant, sol: CentralizedSolution, graph: Graph, p_beta: float,
                  delta: float, p_d: Optional[float] = None, p_d_trials: int = 100_000,
                  seed: int = 0) -> BoundsReport:
    rho_L = float(spectrum(laplacian(graph))[-1])
    half = 0.0
    if p_d is None:
        p_d, half = estimate_disconnection_probability(LinkFailureModel(graph, p_beta, seed), p_d_trials)
    lam = lyapunov_rate(sol.A_C, sol.P_inf)
    c_B = coupling_constant(plant, sol)
    th_b, th_d = theta_values(p_beta, p_d, delta, graph.n_nodes)
    g_mean, g_ms, g_cf = minimal_gamma(lam, c_B, th_b, th_d)
    implied = bound_matrix_AR(g_cf, lam, c_B, th_b)[1] < 1.0
    return BoundsReport(p_beta, p_d, half, delta, rho_L, lam, c_B, th_b, th_d,
                        g_mean, g_ms, g_cf, implied)
