"""Monte-Carlo MSE tables, bounds reports, minimal-p_beta sweeps and Push-Sum runs.

Every trial's process and measurement noise depends only on ``(seed, trial)``,
so the filter for each (p_beta, gamma) and the centralized baseline see the
same trajectories, and outputs are byte-identical across runs.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..analysis import AnalysisError, BoundsReport, bounds_report
from ..dkf import DIVERGENCE_THRESHOLD, ConsensusParams, DkfNetwork, frozen_gains, run_batch
from ..graph import LinkFailureModel
from ..model import centralized_kf, simulate_batch, solve_riccati
from ..pushsum import PushSumNetwork
from .config import ExperimentConfig, build_plant, build_topology, resolve_delta

SCHEMA_VERSION = 1
MSE_COLUMNS = ("p_beta", "gamma", "mse_mean", "mse_stderr", "diverged_fraction", "ckf_mse")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return "nan" if math.isnan(v) else f"{float(v):.12g}"
    return str(v)


def _write_csv(path: Optional[Path], kind: str, columns: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(f"# {kind} schema_version={SCHEMA_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    text = buf.getvalue()
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    return text


@dataclass(frozen=True)
class MseRow:
    p_beta: float
    gamma: int
    mse_mean: float
    mse_stderr: float
    diverged_fraction: float
    ckf_mse: float


@dataclass
class MseTable:
    """MSE per (p_beta, gamma); divergent trials are excluded from the mean
    and counted in ``diverged_fraction`` (mean is nan when all diverge)."""

    rows: List[MseRow]

    def to_csv(self, path=None) -> str:
        return _write_csv(Path(path) if path else None, "mse", MSE_COLUMNS,
                          [[getattr(r, c) for c in MSE_COLUMNS] for r in self.rows])

    def lookup(self, p_beta: float, gamma: int) -> MseRow:
        for r in self.rows:
            if r.p_beta == p_beta and r.gamma == gamma:
                return r
        raise KeyError((p_beta, gamma))


class Workload:
    """Plant, topology, centralized solution and the shared noise trajectories."""

    def __init__(self, cfg: ExperimentConfig, trials: Optional[int] = None):
        self.cfg = cfg
        self.plant = build_plant(cfg)
        self.graph = build_topology(cfg)
        self.delta = resolve_delta(cfg, self.graph)
        self.sol = solve_riccati(self.plant)
        self.gains = frozen_gains(self.plant, self.sol)
        self.trials = cfg.trials if trials is None else trials
        self.states, self.outputs = simulate_batch(self.plant, cfg.horizon, self.trials, cfg.seed)
        self.x_hat0 = np.zeros(self.plant.n)
        self.k0 = int(round(cfg.burn_in * cfg.horizon))
        ckf = centralized_kf(self.plant, self.sol, self.outputs, self.x_hat0)
        err = self.states - ckf
        self.ckf_mse = float(np.mean(np.sum(err[:, self.k0:] ** 2, axis=-1)))

    def failures(self, p_beta: float) -> LinkFailureModel:
        return LinkFailureModel(self.graph, p_beta, self.cfg.seed)

    def squared_errors(self, p_beta: float, gamma: int):
        """(S, T+1) squared network error norms (nan after divergence) and divergence flags."""
        params = ConsensusParams.for_graph(self.graph, gamma, self.delta, allow_small_delta=True)
        fm = self.failures(p_beta)
        if self.cfg.mode == "frozen":
            r = run_batch(self.plant, fm, params, self.gains, self.states, self.outputs,
                          np.arange(self.trials), x_hat0=self.x_hat0)
            return r.sq_err, r.diverged
        return self._live(fm, params)

    def _live(self, fm, params):
        S, T1, _ = self.states.shape
        sq = np.full((S, T1), np.nan)
        div = np.zeros(S, dtype=bool)
        for k in range(S):
            net = DkfNetwork(self.plant, fm, params, mode="live", x_hat0=self.x_hat0,
                             P0=self.plant.x0_cov, trial=k)
            sq[k, 0] = np.sum((self.states[k, 0] - net.estimates) ** 2)
            for t in range(T1 - 1):
                try:
                    with np.errstate(all="ignore"):
                        net.step(t, [y[k, t + 1] for y in self.outputs])
                except np.linalg.LinAlgError:
                    div[k] = True
                    break
                e = np.sum((self.states[k, t + 1] - net.estimates) ** 2)
                if not np.isfinite(e) or e > DIVERGENCE_THRESHOLD ** 2:
                    div[k] = True
                    break
                sq[k, t + 1] = e
        sq[div] = np.nan
        return sq, div

    def mse_row(self, p_beta: float, gamma: int) -> MseRow:
        sq, div = self.squared_errors(p_beta, gamma)
        ok = ~div
        per_trial = np.mean(sq[ok, self.k0:], axis=1) / self.plant.n_nodes
        if per_trial.size:
            mean = float(np.mean(per_trial))
            se = float(np.std(per_trial, ddof=1) / np.sqrt(per_trial.size)) if per_trial.size > 1 else 0.0
        else:
            mean, se = math.nan, math.nan
        return MseRow(float(p_beta), int(gamma), mean, se, float(np.mean(div)), self.ckf_mse)


def run_mse_experiment(cfg: ExperimentConfig, out_dir=None, workload: Optional[Workload] = None) -> MseTable:
    """MSE over nodes and times ``k >= burn_in * horizon`` for every (p_beta, gamma)."""
    wl = Workload(cfg) if workload is None else workload
    table = MseTable([wl.mse_row(p, g) for p in cfg.p_beta for g in cfg.gamma])
    if out_dir is not None:
        table.to_csv(Path(out_dir) / "mse.csv")
    return table


BOUNDS_COLUMNS = tuple(f.name if f.name != "lambda_" else "lambda" for f in fields(BoundsReport)) + ("error",)


def run_bounds_report(cfg: ExperimentConfig, out_dir=None, p_d_trials: int = 100_000):
    """One report per p_beta; a row with ``error`` set when the analysis is infeasible."""
    plant = build_plant(cfg)
    g = build_topology(cfg)
    delta = resolve_delta(cfg, g)
    sol = solve_riccati(plant)
    reports, rows, blocks = [], [], []
    for p in cfg.p_beta:
        try:
            r = bounds_report(plant, sol, g, p, delta, p_d_trials=p_d_trials, seed=cfg.seed)
        except AnalysisError as exc:
            reports.append(exc)
            rows.append([p] + [None] * (len(BOUNDS_COLUMNS) - 2) + [str(exc)])
            blocks.append(f"p_beta = {p}\nerror = {exc}\n")
            continue
        reports.append(r)
        d = r.as_dict()
        rows.append([d[c] for c in BOUNDS_COLUMNS[:-1]] + [""])
        blocks.append(r.to_text())
    if out_dir is not None:
        _write_csv(Path(out_dir) / "bounds.csv", "bounds", BOUNDS_COLUMNS, rows)
        (Path(out_dir) / "bounds.txt").write_text("\n".join(blocks))
    return reports


def run_min_pbeta_sweep(cfg: ExperimentConfig, mse_tolerance: float = 0.10, trials: Optional[int] = None,
                        resolution: float = 0.01, p_floor: float = 0.05, out_dir=None,
                        max_diverged: float = 0.05) -> Dict[int, Optional[float]]:
    """Smallest p_beta (to ``resolution``) whose MSE stays within ``mse_tolerance`` of the
    centralized filter, per gamma; None when even p_beta = 1 fails.

    Admissible means ``diverged_fraction < max_diverged`` and
    ``mse_mean <= (1 + tol) ckf_mse``; bisection assumes admissibility is
    monotone in p_beta. Uses ``min(cfg.trials, 60)`` trials unless given.
    """
    wl = Workload(cfg, trials=min(cfg.trials, 60) if trials is None else trials)

    def admissible(p):
        r = wl.mse_row(p, g)
        if r.diverged_fraction >= max_diverged or math.isnan(r.mse_mean):
            return False
        return math.isinf(mse_tolerance) or r.mse_mean <= (1.0 + mse_tolerance) * r.ckf_mse

    out: Dict[int, Optional[float]] = {}
    for g in cfg.gamma:
        if not admissible(1.0):
            out[g] = None
            continue
        if admissible(p_floor):
            out[g] = p_floor
            continue
        lo, hi = p_floor, 1.0
        while hi - lo > resolution:
            mid = round((lo + hi) / 2, 10)
            if admissible(mid):
                hi = mid
            else:
                lo = mid
        out[g] = hi
    if out_dir is not None:
        _write_csv(Path(out_dir) / "sweep.csv", "sweep", ("gamma", "min_p_beta", "tolerance"),
                   [[g, p, mse_tolerance] for g, p in out.items()])
    return out


PUSHSUM_COLUMNS = ("p_beta", "trials", "rounds_median", "rounds_max", "all_stopped",
                   "G_relerr_median", "G_relerr_p95", "N_relerr_max")


def run_pushsum(cfg: ExperimentConfig, out_dir=None, max_rounds: int = 20_000,
                trials: Optional[int] = None) -> List[dict]:
    """Run the gain-aggregation phase alone and report worst-node gain errors."""
    plant = build_plant(cfg)
    g = build_topology(cfg)
    G = plant.G
    S = min(cfg.trials, 100) if trials is None else trials
    rows = []
    for p in cfg.p_beta:
        fm = LinkFailureModel(g, p, cfg.seed)
        rounds, g_err, n_err, stopped = [], [], [], True
        for k in range(S):
            net = PushSumNetwork(plant, fm, trial=k)
            rounds.append(net.run(max_rounds))
            stopped &= net.all_stopped
            est = net.estimates()
            g_err.append(max(np.linalg.norm(e.G_i - G) / np.linalg.norm(G) for e in est))
            n_err.append(max(abs(e.N_i - plant.n_nodes) / plant.n_nodes for e in est))
        rows.append(dict(zip(PUSHSUM_COLUMNS, (
            float(p), S, float(np.median(rounds)), int(np.max(rounds)), bool(stopped),
            float(np.median(g_err)), float(np.percentile(g_err, 95)), float(np.max(n_err))))))
    if out_dir is not None:
        _write_csv(Path(out_dir) / "pushsum.csv", "pushsum", PUSHSUM_COLUMNS,
                   [[r[c] for c in PUSHSUM_COLUMNS] for r in rows])
    return rows
