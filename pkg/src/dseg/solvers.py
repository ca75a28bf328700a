"""Extra-gradient / mirror-prox with player sampling and variance reduction."""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .games import SIMPLEX, QuadraticGame
from .geometry import Geometry, block_prox, prox_map
from .metrics import DEFAULT_TOL, MetricError, Trace, nash_error
from .rng import spawn_rngs
from .sampling import CHUNK, Sampler, VrTable, masked_estimate, parse_sampler, vr_estimate


class ConfigError(ValueError):
    pass


CONSTANT = "constant"
INV_SQRT = "inv_sqrt"
THEORETICAL_NONSMOOTH = "theoretical_nonsmooth"
THEORETICAL_VR = "theoretical_vr"


@dataclass(frozen=True)
class Schedule:
    """Step-size rule.

    The theoretical rules need the game constants: ``omega`` (potential gap of
    the geometry), ``G`` (aggregate subgradient bound), ``L`` (gradient
    Lipschitz constant), ``sigma``, ``n``, ``b`` and the horizon ``t`` in
    iterations.
    """

    kind: str = CONSTANT
    gamma: float = 0.1
    omega: Optional[float] = None
    G: Optional[float] = None
    L: Optional[float] = None
    sigma: float = 0.0
    n: Optional[int] = None
    b: Optional[int] = None
    t: Optional[int] = None

    @classmethod
    def constant(cls, gamma: float) -> "Schedule":
        return cls(CONSTANT, gamma)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, data: dict) -> "Schedule":
        allowed = set(cls.__dataclass_fields__)
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown schedule fields {sorted(unknown)}")
        if data.get("kind", CONSTANT) not in (CONSTANT, INV_SQRT, THEORETICAL_NONSMOOTH, THEORETICAL_VR):
            raise ConfigError(f"unknown schedule kind {data.get('kind')!r}")
        return cls(**data)


def _need(s: Schedule, *names):
    for name in names:
        v = getattr(s, name)
        if v is None or not v > 0:
            raise ConfigError(f"schedule {s.kind} needs a positive {name}, got {v}")


def nonsmooth_step(omega, n, b, G, sigma, t) -> float:
    denom = n * ((3 * n - b) * G ** 2 / b + sigma ** 2) * t
    if not denom > 0:
        raise ConfigError("non-positive denominator in the non-smooth step size")
    return math.sqrt(2.0 * omega / denom)


def vr_step(omega, n, b, L, sigma, t) -> float:
    p = b / n
    terms = [math.sqrt(5.0 / (27 * n + 12)) / L]
    if p < 1:
        terms.append(p ** 1.5 / (math.sqrt((1 - p) * (2 - p)) * 12 * L * math.sqrt(n)))
    if sigma > 0:
        if not t or t <= 0:
            raise ConfigError("noisy variance-reduced step size needs a horizon t > 0")
        terms.append(0.5 * math.sqrt(omega / (13 * n * sigma ** 2 * t)))
    return min(terms)


def schedule_value(schedule: Schedule, tau: int) -> float:
    s = schedule
    if s.kind == CONSTANT:
        if not s.gamma >= 0:
            raise ConfigError("constant step size must be non-negative")
        return s.gamma
    if s.kind == INV_SQRT:
        _need(s, "gamma")
        return s.gamma / math.sqrt(tau + 1)
    if s.kind == THEORETICAL_NONSMOOTH:
        _need(s, "omega", "n", "b", "G", "t")
        return nonsmooth_step(s.omega, s.n, s.b, s.G, s.sigma, s.t)
    if s.kind == THEORETICAL_VR:
        _need(s, "omega", "n", "b", "L")
        return vr_step(s.omega, s.n, s.b, s.L, s.sigma, s.t)
    raise ConfigError(f"unknown schedule kind {s.kind!r}")


@dataclass
class SolverConfig:
    method: str = "eg"            # "eg" (full extra-gradient) or "dseg"
    sampler: str = "full"         # full | uniform:b | cyclic
    vr: bool = False
    schedule: Schedule = field(default_factory=Schedule)
    k_max: int = 10_000
    seed: int = 0
    checkpoints: int = 30
    mirror: Optional[str] = None  # "entropy" (default on simplices) or "euclidean"
    init: str = "center"          # center | random
    metric_tol: float = DEFAULT_TOL
    log_last: bool = False

    def __post_init__(self):
        if isinstance(self.schedule, dict):
            self.schedule = Schedule.from_dict(self.schedule)
        if self.method not in ("eg", "dseg"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.method == "eg" and self.sampler != "full":
            raise ConfigError("method 'eg' evaluates every player; use sampler 'full'")
        if self.k_max <= 0 or self.checkpoints < 1:
            raise ConfigError("k_max and checkpoints must be positive")
        if self.init not in ("center", "random"):
            raise ConfigError(f"unknown init {self.init!r}")

    @property
    def b(self) -> Optional[int]:
        kind, b = parse_sampler(self.sampler, 0)
        return None if kind == "full" else b

    def batch(self, n: int) -> int:
        return parse_sampler(self.sampler, n)[1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schedule"] = self.schedule.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SolverConfig":
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__) - {"b"}
        if unknown:
            raise ConfigError(f"unknown solver fields {sorted(unknown)}")
        b = data.pop("b", None)
        if b is not None and str(data.get("sampler", "")).strip().lower() == "uniform":
            data["sampler"] = f"uniform:{int(b)}"
        return cls(**data)


@dataclass
class RunState:
    theta: np.ndarray
    avg_num: np.ndarray
    gamma_sum: float
    k: int
    tau: int
    sampler: Sampler
    vr: Optional[VrTable]
    noise_rng: np.random.Generator
    theta_half: Optional[np.ndarray] = None

    @property
    def theta_avg(self) -> np.ndarray:
        if self.gamma_sum == 0:
            return self.theta.copy()
        return self.avg_num / self.gamma_sum


def initial_point(game: QuadraticGame, config: SolverConfig, rng: np.random.Generator) -> np.ndarray:
    if game.geometry == SIMPLEX:
        if config.init == "center":
            return game.layout.centers()
        return game.sample_domain(rng, 1)[0]
    if config.init == "center":
        return np.ones(game.d)
    return rng.standard_normal(game.d)


def init_state(game: QuadraticGame, config: SolverConfig, theta0=None) -> RunState:
    sample_rng, noise_rng, init_rng = spawn_rngs(config.seed, 3)
    kind, b = parse_sampler(config.sampler, game.n)
    sampler = Sampler(kind, game.n, b, sample_rng)
    theta = initial_point(game, config, init_rng) if theta0 is None else np.array(theta0, float)
    vr = VrTable.initialized(game, theta, noise_rng) if config.vr else None
    return RunState(theta, np.zeros(game.d), 0.0, 0, 0, sampler, vr, noise_rng)


def _estimate(game, theta, mask, state: RunState):
    if state.vr is None:
        return masked_estimate(game, theta, mask, state.noise_rng).values
    est, state.vr = vr_estimate(game, theta, mask, state.vr, state.noise_rng)
    return est.values


def step(game: QuadraticGame, geometry: Geometry, state: RunState, schedule: Schedule) -> RunState:
    """One extrapolation + update iteration; mutates and returns ``state``."""
    gamma = schedule_value(schedule, state.tau)
    extra, update = state.sampler.next_masks()
    theta = state.theta
    sparse = state.vr is None
    g_half = _estimate(game, theta, extra, state)
    theta_half = prox_map(geometry, theta, gamma * g_half, extra.selected if sparse else None)
    g_new = _estimate(game, theta_half, update, state)
    state.avg_num += gamma * theta
    state.gamma_sum += gamma
    state.theta = prox_map(geometry, theta, gamma * g_new, update.selected if sparse else None)
    state.theta_half = theta_half
    state.k += extra.b + update.b
    state.tau += 1
    return state


def checkpoint_iterations(k_max: int, per_iter: int, count: int) -> np.ndarray:
    """Iteration counts (>= 1) at roughly log-spaced gradient budgets up to k_max."""
    t_max = max(1, -(-k_max // per_iter))
    if count <= 1:
        return np.array([t_max])
    ts = np.unique(np.round(np.geomspace(1, t_max, count)).astype(np.int64))
    return ts


def _horizon(schedule: Schedule, k_max: int, b: int) -> Schedule:
    if schedule.kind in (THEORETICAL_NONSMOOTH, THEORETICAL_VR) and schedule.t is None:
        return replace(schedule, t=max(1, -(-k_max // (2 * b))))
    return schedule


_SHARED = ("method", "sampler", "vr", "k_max", "checkpoints", "mirror", "init",
           "metric_tol", "log_last")


def run(game: QuadraticGame, geometry: Optional[Geometry], config: SolverConfig,
        theta0=None) -> Trace:
    """Iterate until ``k >= k_max`` and record the averaged iterate's Nash error.

    Checkpoint failures (uncertified inner solves, metric errors) are stored in
    ``trace.failures`` rather than aborting the run.
    """
    return run_many(game, geometry, [config], theta0)[0]


def run_many(game: QuadraticGame, geometry: Optional[Geometry], configs, theta0=None) -> list:
    """Advance several runs of one game in lockstep, one trace per config.

    Configs may differ in step size and seed only. Each run keeps its own
    random streams, so a run's trajectory does not depend on its batch mates.
    """
    configs = list(configs)
    if not configs:
        return []
    c0 = configs[0]
    for c in configs[1:]:
        bad = [f for f in _SHARED if getattr(c, f) != getattr(c0, f)]
        if bad:
            raise ConfigError(f"batched runs must share {bad}")
    if geometry is None:
        geometry = Geometry.for_game(game, c0.mirror)
    if game.layout.equal_dims is None:
        return [_run_single(game, geometry, c, theta0) for c in configs]
    return _Batch(game, geometry, configs, theta0).run()


def _checkpoint(game, geometry, config, theta_hat, theta_last, k, out):
    try:
        rep = nash_error(game, geometry, theta_hat, tol=config.metric_tol)
        err, gap = rep.total, rep.max_gap
        if not rep.certified:
            out["failures"].append((k, f"inner gap {gap:.3g} above tolerance"))
    except (MetricError, FloatingPointError) as exc:
        err, gap = math.nan, math.nan
        out["failures"].append((k, str(exc)))
    if config.log_last:
        try:
            out["lasts"].append(nash_error(game, geometry, theta_last, tol=config.metric_tol).total)
        except MetricError:
            out["lasts"].append(math.nan)
    out["k"].append(k)
    out["err"].append(err)
    out["gap"].append(gap)


def _new_record():
    return {"k": [], "err": [], "gap": [], "time": [], "lasts": [], "failures": []}


def _to_trace(rec, config, theta_hat) -> Trace:
    return Trace(np.array(rec["k"], dtype=np.int64), np.array(rec["err"]), np.array(rec["gap"]),
                 np.array(rec["time"]),
                 err_last=np.array(rec["lasts"]) if config.log_last else None,
                 failures=rec["failures"], final_theta=theta_hat)


def _run_single(game, geometry, config, theta0=None) -> Trace:
    # fallback for players of unequal dimensions
    b = config.batch(game.n)
    schedule = _horizon(config.schedule, config.k_max, b)
    state = init_state(game, config, theta0)
    marks = checkpoint_iterations(config.k_max, 2 * b, config.checkpoints)
    rec = _new_record()
    spent = 0.0
    for mark in marks:
        start = time.perf_counter()
        while state.tau < mark:
            step(game, geometry, state, schedule)
        spent += time.perf_counter() - start
        rec["time"].append(spent)
        _checkpoint(game, geometry, config, state.theta_avg, state.theta, state.k, rec)
    return _to_trace(rec, config, state.theta_avg)


class _Batch:
    """Vectorized DSEG over R runs of a game whose players share one dimension m."""

    def __init__(self, game, geometry, configs, theta0):
        self.game, self.geometry, self.configs = game, geometry, configs
        c0 = configs[0]
        n = game.n
        self.m = game.layout.equal_dims
        kind, b = parse_sampler(c0.sampler, n)
        self.b = b
        self.schedules = [_horizon(c.schedule, c.k_max, b) for c in configs]
        self.samplers, self.noise_rngs, thetas = [], [], []
        for c in configs:
            sample_rng, noise_rng, init_rng = spawn_rngs(c.seed, 3)
            self.samplers.append(Sampler(kind, n, b, sample_rng))
            self.noise_rngs.append(noise_rng)
            thetas.append(initial_point(game, c, init_rng) if theta0 is None
                          else np.array(theta0, dtype=np.float64))
        self.full = self.samplers[0].is_full
        self.theta = np.stack(thetas)
        self.R = len(configs)
        self.q = game.d if self.full else b * self.m
        self.table = None
        if c0.vr:
            self.table = np.stack([VrTable.initialized(game, t, r).values
                                   for t, r in zip(self.theta, self.noise_rngs)])
        self.avg = np.zeros_like(self.theta)
        self.gsum = np.zeros(self.R)
        self.k = 0
        self.tau = 0
        self.constant = all(s.kind == CONSTANT for s in self.schedules)
        if self.constant:
            self._gamma = np.array([schedule_value(s, 0) for s in self.schedules])
        self._ar = np.arange(self.R)[:, None]
        self._inner = np.arange(self.m)

    def gammas(self) -> np.ndarray:
        if self.constant:
            return self._gamma
        return np.array([schedule_value(s, self.tau) for s in self.schedules])

    def _grad(self, theta, idx, noise):
        game = self.game
        if idx is None:
            g = np.einsum("qd,rd->rq", game.jacobian, theta)
            if game.reg_l1:
                g += game.reg_l1 * np.sign(theta - game._centers)
        else:
            g = np.einsum("rqd,rd->rq", game.jacobian[idx], theta)
            if game.reg_l1:
                g += game.reg_l1 * np.sign(theta[self._ar, idx] - game._centers[idx])
        if noise is not None:
            g += noise
        return g

    def _prox_dense(self, z, xi):
        m = self.m
        return block_prox(self.geometry.kind, z.reshape(-1, m), xi.reshape(-1, m)).reshape(z.shape)

    def _prox_rows(self, z, idx, xi):
        """Copy of z with only the blocks listed in idx moved."""
        m = self.m
        out = z.copy()
        new = block_prox(self.geometry.kind, z[self._ar, idx].reshape(-1, m), xi.reshape(-1, m))
        out[self._ar, idx] = new.reshape(idx.shape)
        return out

    def _estimate(self, theta, idx, noise, gamma):
        """Returns the proxed point for the gradient estimate at theta."""
        g = self._grad(theta, idx, noise)
        scale = self.game.n / self.b
        if self.table is None:
            if idx is None:
                return None, gamma[:, None] * g
            return idx, gamma[:, None] * (scale * g)
        if idx is None:
            self.table = g.copy()
            return None, gamma[:, None] * g
        out = self.table.copy()
        out[self._ar, idx] = scale * g + (1.0 - scale) * self.table[self._ar, idx]
        self.table[self._ar, idx] = g
        return None, gamma[:, None] * out

    def _move(self, z, idx, xi):
        if idx is None:
            return self._prox_dense(z, xi)
        return self._prox_rows(z, idx, xi)

    def _rows(self, players):
        # players (R, b) -> coordinate indices (R, b*m)
        return (players[:, :, None] * self.m + self._inner).reshape(self.R, -1)

    def advance(self, iters: int):
        T = iters
        P = None if self.full else np.stack([s.take(T) for s in self.samplers], axis=1)
        Z = None
        sigma = self.game.noise_std
        if sigma:
            Z = np.stack([r.standard_normal((T, 2, self.q)) for r in self.noise_rngs], axis=1)
            Z *= sigma
        per_iter = 2 * (self.game.n if self.full else self.b)
        for t in range(T):
            gamma = self.gammas()
            theta = self.theta
            ie = iu = None
            if P is not None:
                ie, iu = self._rows(P[t, :, 0]), self._rows(P[t, :, 1])
            idx, xi = self._estimate(theta, ie, None if Z is None else Z[t, :, 0], gamma)
            half = self._move(theta, idx, xi)
            idx, xi = self._estimate(half, iu, None if Z is None else Z[t, :, 1], gamma)
            self.avg += gamma[:, None] * theta
            self.gsum += gamma
            self.theta = self._move(theta, idx, xi)
            self.k += per_iter
            self.tau += 1

    def theta_avg(self, r: int) -> np.ndarray:
        if self.gsum[r] == 0:
            return self.theta[r].copy()
        return self.avg[r] / self.gsum[r]

    def run(self) -> list:
        c0 = self.configs[0]
        marks = checkpoint_iterations(c0.k_max, 2 * self.b, c0.checkpoints)
        recs = [_new_record() for _ in self.configs]
        spent = 0.0
        for mark in marks:
            start = time.perf_counter()
            while self.tau < mark:
                self.advance(min(CHUNK, int(mark) - self.tau))
            spent += (time.perf_counter() - start) / self.R
            for r, (c, rec) in enumerate(zip(self.configs, recs)):
                rec["time"].append(spent)
                _checkpoint(self.game, self.geometry, c, self.theta_avg(r), self.theta[r], self.k, rec)
        return [_to_trace(rec, c, self.theta_avg(r))
                for r, (c, rec) in enumerate(zip(self.configs, recs))]
