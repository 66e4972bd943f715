"""JSON experiment configuration with a built-in preset for the planar tracker."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from ..dkf import default_delta
from ..graph import Graph, default_topology, read_edge_list
from ..model import Plant, paper5_plant

MODES = ("frozen", "live")


class ConfigError(ValueError):
    """Validation failure; ``field`` names the offending key, ``line`` its line in the file."""

    def __init__(self, field: str, message: str, line: Optional[int] = None):
        self.field = field
        self.line = line
        where = f" (line {line})" if line else ""
        super().__init__(f"{field}{where}: {message}")


@dataclass
class ExperimentConfig:
    plant: Dict[str, Any] = field(default_factory=lambda: {"preset": "paper5", "tau": 0.25,
                                                           "sigma": 0.05, "sigma_g": 0.1})
    graph: str = "default"
    p_beta: List[float] = field(default_factory=lambda: [1.0, 0.9, 0.8, 0.7, 0.6, 0.5])
    gamma: List[int] = field(default_factory=lambda: [1, 2, 4, 8, 16])
    delta: Union[str, float] = "auto"
    trials: int = 300
    horizon: int = 450
    burn_in: float = 0.2
    seed: int = 0
    mode: str = "frozen"
    out_dir: str = "out"
    n_nodes: int = 10

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


PRESETS = {"paper5": ExperimentConfig}


def _line_of(text: Optional[str], key: str) -> Optional[int]:
    if not text:
        return None
    needle = f'"{key}"'
    for k, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return k
    return None


def _num(v, name, line, kind=float):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(name, f"expected a number, got {v!r}", line)
    if kind is int and int(v) != v:
        raise ConfigError(name, f"expected an integer, got {v!r}", line)
    if not math.isfinite(v):
        raise ConfigError(name, "must be finite", line)
    return kind(v)


def validate(cfg: ExperimentConfig, text: Optional[str] = None) -> ExperimentConfig:
    ln = lambda k: _line_of(text, k)
    trials = _num(cfg.trials, "trials", ln("trials"), int)
    if trials < 1:
        raise ConfigError("trials", f"must be >= 1, got {trials}", ln("trials"))
    horizon = _num(cfg.horizon, "horizon", ln("horizon"), int)
    if horizon < 10:
        raise ConfigError("horizon", f"must be >= 10, got {horizon}", ln("horizon"))
    burn = _num(cfg.burn_in, "burn_in", ln("burn_in"))
    if not 0.0 <= burn < 1.0:
        raise ConfigError("burn_in", f"must lie in [0, 1), got {burn}", ln("burn_in"))
    seed = _num(cfg.seed, "seed", ln("seed"), int)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("seed", "must be an unsigned 64-bit integer", ln("seed"))
    if cfg.mode not in MODES:
        raise ConfigError("mode", f"must be one of {MODES}, got {cfg.mode!r}", ln("mode"))
    if not isinstance(cfg.p_beta, list) or not cfg.p_beta:
        raise ConfigError("p_beta", "expected a non-empty list", ln("p_beta"))
    p_beta = [_num(p, "p_beta", ln("p_beta")) for p in cfg.p_beta]
    if any(not 0.0 < p <= 1.0 for p in p_beta):
        raise ConfigError("p_beta", "every value must lie in (0, 1]", ln("p_beta"))
    if not isinstance(cfg.gamma, list) or not cfg.gamma:
        raise ConfigError("gamma", "expected a non-empty list", ln("gamma"))
    gamma = [_num(g, "gamma", ln("gamma"), int) for g in cfg.gamma]
    if any(g < 0 for g in gamma):
        raise ConfigError("gamma", "values must be >= 0", ln("gamma"))
    delta = cfg.delta
    if delta != "auto":
        delta = _num(delta, "delta", ln("delta"))
        if delta <= 0:
            raise ConfigError("delta", "must be positive or \"auto\"", ln("delta"))
    if not isinstance(cfg.plant, dict):
        raise ConfigError("plant", "expected an object", ln("plant"))
    preset = cfg.plant.get("preset")
    if preset is not None and preset not in PRESETS:
        raise ConfigError("plant", f"unknown preset {preset!r}", ln("preset"))
    if preset is None:
        for key in ("A", "Q", "C", "R"):
            if key not in cfg.plant:
                raise ConfigError(f"plant.{key}", "missing (give matrices or a preset)", ln("plant"))
    return replace(cfg, trials=trials, horizon=horizon, burn_in=burn, seed=seed,
                   p_beta=p_beta, gamma=gamma, delta=delta)


def parse_config(source: Union[str, Path, Dict[str, Any]]) -> ExperimentConfig:
    """Config from a JSON file path, a preset name, or an already-parsed dict.

    Unknown keys are rejected; missing keys take the preset defaults.
    """
    text = None
    if isinstance(source, dict):
        data = dict(source)
    elif str(source) in PRESETS:
        return validate(PRESETS[str(source)]())
    else:
        try:
            text = Path(source).read_text()
        except OSError as exc:
            raise ConfigError("config", f"cannot read {source}: {exc}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON: {exc.msg}", exc.lineno) from exc
        if not isinstance(data, dict):
            raise ConfigError("config", "top level must be an object", 1)
    base = PRESETS[data.pop("preset", "paper5")]() if data.get("preset", "paper5") in PRESETS else None
    if base is None:
        raise ConfigError("preset", f"unknown preset {data.get('preset')!r}", _line_of(text, "preset"))
    known = set(asdict(base))
    for key in data:
        if key not in known:
            raise ConfigError(key, "unknown field", _line_of(text, key))
    if "plant" in data and isinstance(data["plant"], dict) and "preset" in data["plant"]:
        data["plant"] = {**base.plant, **data["plant"]}
    cfg = replace(base, **data)
    return validate(cfg, text)


def build_plant(cfg: ExperimentConfig) -> Plant:
    spec = cfg.plant
    if spec.get("preset") == "paper5":
        kw = {k: spec[k] for k in ("tau", "sigma", "sigma_g", "x0_mean", "x0_cov") if k in spec}
        return paper5_plant(n_nodes=cfg.n_nodes, **kw)
    n = np.asarray(spec["A"]).shape[0]
    try:
        return Plant(np.asarray(spec["A"], dtype=float), np.asarray(spec["Q"], dtype=float),
                     [np.asarray(c, dtype=float).reshape(-1, n) for c in spec["C"]],
                     [np.atleast_2d(np.asarray(r, dtype=float)) if np.size(r) else np.zeros((0, 0))
                      for r in spec["R"]],
                     np.asarray(spec.get("x0_mean", np.zeros(n)), dtype=float),
                     np.asarray(spec.get("x0_cov", np.eye(n)), dtype=float))
    except (ValueError, TypeError) as exc:
        raise ConfigError("plant", str(exc)) from exc


def build_topology(cfg: ExperimentConfig) -> Graph:
    if cfg.graph == "default":
        g = default_topology()
    else:
        try:
            g = read_edge_list(cfg.graph)
        except (OSError, ValueError) as exc:
            raise ConfigError("graph", str(exc)) from exc
    if g.n_nodes != cfg.n_nodes:
        raise ConfigError("graph", f"graph has {g.n_nodes} nodes but n_nodes={cfg.n_nodes}")
    return g


def resolve_delta(cfg: ExperimentConfig, g: Graph) -> float:
    return default_delta(g) if cfg.delta == "auto" else float(cfg.delta)
