"""Grid-search benchmarks over step sizes, games and seeds."""
from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .games import FULL, SIMPLEX, GameSynthesisParams, QuadraticGame, synthesize_game
from .metrics import MetricError, Trace, aggregate, slope
from .solvers import ConfigError, Schedule, SolverConfig, run_many


class BenchError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridSpec:
    min: float = 1e-5
    max: float = 1.0
    count: int = 32
    log: bool = True

    def __post_init__(self):
        if self.count < 1:
            raise ConfigError("grid count must be at least 1")
        if not 0 < self.min <= self.max:
            raise ConfigError("grid needs 0 < min <= max")

    def values(self) -> np.ndarray:
        if self.count == 1:
            return np.array([float(self.min)])
        if self.log:
            return np.geomspace(self.min, self.max, self.count)
        return np.linspace(self.min, self.max, self.count)


@dataclass(frozen=True)
class SolverSpec:
    method: str = "dseg"
    sampler: str = "uniform:1"
    vr: bool = False
    name: Optional[str] = None
    gammas: Optional[tuple] = None   # explicit step sizes, overriding the bench grid

    @property
    def id(self) -> str:
        if self.name:
            return self.name
        if self.method == "eg":
            return "eg-vr" if self.vr else "eg"
        tag = self.sampler.replace(":", "")
        return f"dseg-{tag}" + ("-vr" if self.vr else "")


@dataclass
class ExperimentConfig:
    n: int = 5
    d: int = 3
    alpha: float = 0.9
    mu: float = 0.01
    reg_l1: float = 0.0
    noise_std: float = 0.0
    geometry: str = SIMPLEX
    own_term: str = FULL
    game_file: Optional[str] = None
    games: int = 5
    game_seeds: Optional[list] = None
    solvers: list = field(default_factory=lambda: [SolverSpec("eg", "full")])
    grid: GridSpec = field(default_factory=GridSpec)
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    k_max: int = 10_000
    checkpoints: int = 30
    init: str = "center"
    mirror: Optional[str] = None
    metric_tol: float = 1e-6
    timing: bool = False
    out: Optional[str] = None

    def __post_init__(self):
        if isinstance(self.grid, dict):
            self.grid = GridSpec(**self.grid)
        self.solvers = [SolverSpec(**{**s, "gammas": tuple(s["gammas"]) if s.get("gammas") else None})
                        if isinstance(s, dict) else s for s in self.solvers]
        if not self.solvers:
            raise ConfigError("no solvers configured")
        if not self.seeds:
            raise ConfigError("seeds must be non-empty")
        ids = [s.id for s in self.solvers]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate solver ids {ids}")
        if self.game_file is not None and not Path(self.game_file).is_file():
            raise ConfigError(f"game file {self.game_file} does not exist")
        if self.game_seeds is None and self.games < 1:
            raise ConfigError("need at least one game")
        for s in self.solvers:
            self.solver_config(s, 0.1, 0)   # validates method/sampler/vr

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown experiment fields {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["solvers"] = [{k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(s).items()}
                        for s in self.solvers]
        return d

    def canonical(self) -> str:
        """Canonical JSON of the fields that change results (not the output location)."""
        d = self.to_dict()
        d.pop("out", None)
        d["game_seeds"] = self.seed_list()
        d.pop("games", None)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def seed_list(self) -> list:
        return list(self.game_seeds) if self.game_seeds is not None else list(range(self.games))

    def gammas(self, solver: SolverSpec) -> np.ndarray:
        return np.array(solver.gammas, dtype=float) if solver.gammas else self.grid.values()

    def make_game(self, game_seed: int) -> QuadraticGame:
        if self.game_file is not None:
            return QuadraticGame.load(self.game_file)
        params = GameSynthesisParams(self.n, self.d, self.alpha, self.mu, int(game_seed))
        return synthesize_game(params, self.reg_l1, self.noise_std, self.geometry, self.own_term)

    def solver_config(self, solver: SolverSpec, gamma: float, seed: int) -> SolverConfig:
        return SolverConfig(method=solver.method, sampler=solver.sampler, vr=solver.vr,
                            schedule=Schedule.constant(float(gamma)), k_max=self.k_max,
                            seed=int(seed), checkpoints=self.checkpoints, mirror=self.mirror,
                            init=self.init, metric_tol=self.metric_tol)


@dataclass
class RunRecord:
    config_hash: str
    solver: str
    gamma: float
    game_seed: int
    seed: int
    final_err: float
    failures: int
    wall_time: Optional[float]
    version: str = __version__

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class SolverResult:
    solver: str
    gammas: np.ndarray
    scores: np.ndarray              # final aggregated Err per gamma (inf if nothing survived)
    survivors: np.ndarray
    best_index: int
    trace: Trace                    # aggregated trace at the best gamma
    boundary: bool

    @property
    def best_gamma(self) -> float:
        return float(self.gammas[self.best_index])

    @property
    def final_err(self) -> float:
        return float(self.scores[self.best_index])


@dataclass
class BenchResult:
    config: ExperimentConfig
    solvers: dict                   # id -> SolverResult
    records: list
    cell_traces: dict               # (solver, gamma index, game seed, seed) -> Trace
    warnings: list


def _unit(args):
    """Work unit: one solver, one game, one step size, every seed."""
    config, si, gi, game_seed = args
    solver = config.solvers[si]
    game = config.make_game(game_seed)
    gamma = config.gammas(solver)[gi]
    cfgs = [config.solver_config(solver, gamma, s) for s in config.seeds]
    traces = run_many(game, None, cfgs)
    return si, gi, game_seed, traces


def _units(config: ExperimentConfig):
    return [(config, si, gi, gs)
            for si, s in enumerate(config.solvers)
            for gi in range(len(config.gammas(s)))
            for gs in config.seed_list()]


def _ok(trace: Trace) -> bool:
    return len(trace.k) > 0 and bool(np.all(np.isfinite(trace.err)))


def run_bench(config: ExperimentConfig, jobs: int = 1) -> BenchResult:
    """Run every (solver, gamma, game, seed) cell and pick each solver's best gamma."""
    units = _units(config)
    if jobs > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outs = list(pool.map(_unit, units))
    else:
        outs = [_unit(u) for u in units]
    h = config.config_hash()
    cells, records, warnings = {}, [], []
    for si, gi, gs, traces in outs:
        solver = config.solvers[si]
        gamma = float(config.gammas(solver)[gi])
        for seed, tr in zip(config.seeds, traces):
            cells[(solver.id, gi, gs, seed)] = tr
            fe = float(tr.err[-1]) if len(tr.err) else math.nan
            wall = float(tr.elapsed[-1]) if config.timing and len(tr.elapsed) else None
            records.append(RunRecord(h, solver.id, gamma, int(gs), int(seed), fe,
                                     len(tr.failures), wall))
    results = {}
    for si, solver in enumerate(config.solvers):
        gammas = config.gammas(solver)
        scores = np.full(len(gammas), np.inf)
        surv = np.zeros(len(gammas), dtype=int)
        aggs = {}
        for gi in range(len(gammas)):
            trs = [cells[(solver.id, gi, gs, s)] for gs in config.seed_list() for s in config.seeds]
            good = [t for t in trs if _ok(t)]
            surv[gi] = len(good)
            if len(good) < len(trs):
                warnings.append(f"{solver.id}: {len(trs) - len(good)} failed cells at gamma={gammas[gi]:.6g}")
            if good:
                aggs[gi] = aggregate(good)
                scores[gi] = aggs[gi].err[-1]
        if not aggs:
            raise BenchError(f"every cell of solver {solver.id} failed")
        best = int(np.argmin(scores))  # ties: first, i.e. smallest gamma on ascending grids
        boundary = len(gammas) > 1 and best in (int(np.argmin(gammas)), int(np.argmax(gammas)))
        if boundary:
            warnings.append(f"{solver.id}: best gamma {gammas[best]:.6g} lies on the grid boundary")
        results[solver.id] = SolverResult(solver.id, gammas, scores, surv, best, aggs[best], boundary)
    return BenchResult(config, results, records, cells, warnings)


def _fmt(x: float) -> str:
    return repr(float(x))


def write_bench(result: BenchResult, out) -> Path:
    """Write the result directory; contents depend only on the config (timing off)."""
    out = Path(out)
    cfg = result.config
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "cells").mkdir(exist_ok=True)
    (out / "config.json").write_text(json.dumps(json.loads(cfg.canonical()), indent=2, sort_keys=True) + "\n")
    lines = ["solver,gamma,final_err,survivors"]
    summary = {"config_hash": cfg.config_hash(), "version": __version__, "solvers": {}}
    for sid, r in result.solvers.items():
        for g, s, n in zip(r.gammas, r.scores, r.survivors):
            lines.append(f"{sid},{_fmt(g)},{_fmt(s)},{int(n)}")
        (out / "traces" / f"{sid}.csv").write_text(r.trace.to_csv(timing=False))
        try:
            sl = slope(r.trace)
        except MetricError:
            sl = None
        summary["solvers"][sid] = {"best_gamma": r.best_gamma, "final_err": r.final_err,
                                   "boundary": r.boundary, "slope_last_decade": sl}
    (out / "grid.csv").write_text("\n".join(lines) + "\n")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    recs = sorted(result.records, key=lambda r: (r.solver, r.gamma, r.game_seed, r.seed))
    (out / "records.jsonl").write_text("".join(r.to_json() + "\n" for r in recs))
    for (sid, gi, gs, seed), tr in sorted(result.cell_traces.items()):
        d = out / "cells" / sid
        d.mkdir(exist_ok=True)
        (d / f"gamma{gi:02d}_game{gs}_seed{seed}.csv").write_text(tr.to_csv(timing=cfg.timing))
    (out / "warnings.txt").write_text("".join(w + "\n" for w in result.warnings))
    return out


def default_out_root() -> Path:
    return Path(os.environ.get("DSEG_OUT", "results"))
