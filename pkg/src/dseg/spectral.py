"""Linear algorithm operators of extra-gradient schemes on 2-player bilinear games."""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .games import GameSynthesisParams, synthesize_payoff
from .rng import derive_seed

FULL = "full"
CYCLIC = "cyclic"
RANDOM = "random"
SCHEMES = (FULL, CYCLIC, RANDOM)

DEFAULT_GRID = np.geomspace(1e-3, 2.0, 64)
RADIUS_TOL = 1e-6
MAX_SQUARINGS = 60


class SpectralError(ValueError):
    pass


@dataclass(frozen=True)
class OperatorSpec:
    scheme: str
    A: np.ndarray
    gamma: float
    matrix: np.ndarray


def block_masks(m: int):
    """Diagonal masks selecting the first and the second half of the coordinates."""
    if m % 2:
        raise SpectralError(f"payoff dimension {m} is not even")
    h = m // 2
    M1 = np.diag(np.r_[np.ones(h), np.zeros(h)])
    return M1, np.eye(m) - M1


def pair_operator(A: np.ndarray, gamma: float, Mi: np.ndarray, Mj: np.ndarray) -> np.ndarray:
    """Extrapolate the players of Mj, update those of Mi: I - g Mi A + g^2 Mi A Mj A."""
    I = np.eye(A.shape[0])
    return I - gamma * Mi @ A + gamma ** 2 * Mi @ A @ Mj @ A


def _check(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise SpectralError(f"payoff must be square, got shape {A.shape}")
    if A.shape[0] % 2:
        raise SpectralError(f"payoff dimension {A.shape[0]} is not even")
    return A


def build_operator(scheme: str, A, gamma: float) -> OperatorSpec:
    """Operator mapping theta_k to theta_{k+4} (four gradient evaluations).

    ``random`` is the operator of the expected iterate.
    """
    A = _check(A)
    if gamma < 0:
        raise SpectralError("step size must be non-negative")
    I = np.eye(A.shape[0])
    A2 = A @ A
    if scheme == FULL:
        mat = I - gamma * A + gamma ** 2 * A2
    elif scheme == CYCLIC:
        M1, M2 = block_masks(A.shape[0])
        mat = pair_operator(A, gamma, M1, M2) @ pair_operator(A, gamma, M2, M1)
    elif scheme == RANDOM:
        half = 4 * I - 2 * gamma * A + gamma ** 2 * A2
        mat = half @ half / 16.0
    else:
        raise SpectralError(f"unknown scheme {scheme!r}")
    return OperatorSpec(scheme, A, float(gamma), mat)


def random_operator_enumerated(A, gamma: float) -> np.ndarray:
    """Average of the 16 products A_{j1 j2} A_{j3 j4} over all mask choices."""
    A = _check(A)
    masks = block_masks(A.shape[0])
    pairs = [pair_operator(A, gamma, masks[i], masks[j]) for i in range(2) for j in range(2)]
    return sum(P @ Q for P in pairs for Q in pairs) / 16.0


@dataclass(frozen=True)
class RadiusEstimate:
    value: float
    converged: bool
    rel_change: float
    squarings: int

    def __float__(self):
        return self.value


def _radius_batch(M: np.ndarray, tol: float, cap: int):
    """Repeated squaring on a stack (k, m, m): log ||M^(2^s)|| tracked with normalization.

    Estimates are Richardson-corrected: if ||M^t|| ~ C rho^t then
    2 log r_{s+1} - log r_s removes the log C / t term.
    """
    k = M.shape[0]
    norms = np.linalg.norm(M, axis=(1, 2))
    zero = norms == 0
    B = np.where(zero[:, None, None], 0.0, M / np.where(zero, 1.0, norms)[:, None, None])
    logn = np.log(np.where(zero, 1.0, norms))     # log ||M^(2^s)||
    prev_raw = logn.copy()
    prev_est = np.full(k, np.nan)
    est = logn.copy()
    change = np.full(k, np.inf)
    done = zero.copy()
    calm = np.zeros(k, dtype=int)   # consecutive steps below tol
    s = 0
    while s < cap and not done.all():
        s += 1
        B = B @ B
        nb = np.linalg.norm(B, axis=(1, 2))
        dead = (nb == 0) | ~np.isfinite(nb)
        zero |= dead & ~done
        nb = np.where(dead, 1.0, nb)
        B = B / nb[:, None, None]
        logn = 2.0 * logn + np.log(nb)
        raw = logn / 2.0 ** s
        new_est = 2.0 * raw - prev_raw
        act = ~done & ~zero
        if s >= 2:
            change[act] = np.abs(np.expm1(new_est[act] - prev_est[act]))
            calm = np.where(act & (change <= tol), calm + 1, 0)
            # two quiet steps in a row: a single small change can be a phase coincidence
            done |= act & (calm >= 2)
        prev_est = np.where(act, new_est, prev_est)
        est = np.where(act, new_est, est)
        prev_raw = raw
        done |= zero
    rho = np.where(zero, 0.0, np.exp(est))
    change = np.where(zero, 0.0, change)
    return rho, done, change, s


def radius_estimate(M, tol: float = RADIUS_TOL, cap: int = MAX_SQUARINGS) -> RadiusEstimate:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise SpectralError("spectral radius needs a square matrix")
    if not np.all(np.isfinite(M)):
        raise SpectralError("matrix has non-finite entries")
    rho, done, change, s = _radius_batch(M[None], tol, cap)
    return RadiusEstimate(float(rho[0]), bool(done[0]), float(change[0]), s)


def spectral_radius(M, tol: float = RADIUS_TOL, cap: int = MAX_SQUARINGS) -> float:
    """Largest eigenvalue modulus via Gelfand's formula ||M^t||^(1/t).

    A warning is emitted when the estimate has not settled to ``tol`` within
    ``cap`` squarings; use :func:`radius_estimate` for the achieved tolerance.
    """
    r = radius_estimate(M, tol, cap)
    if not r.converged:
        warnings.warn(f"spectral radius not converged (relative change {r.rel_change:.2e})",
                      RuntimeWarning, stacklevel=2)
    return r.value


def spectral_radii(mats: np.ndarray, tol: float = RADIUS_TOL, cap: int = MAX_SQUARINGS) -> np.ndarray:
    """Vectorized :func:`spectral_radius` over a stack of matrices."""
    mats = np.asarray(mats, dtype=np.float64)
    if not np.all(np.isfinite(mats)):
        raise SpectralError("matrix has non-finite entries")
    rho, done, change, _ = _radius_batch(mats, tol, cap)
    if not done.all():
        warnings.warn(f"{int((~done).sum())} spectral radii not converged", RuntimeWarning, stacklevel=2)
    return rho


def min_radius_over_grid(scheme: str, A, gammas: Optional[Sequence[float]] = None):
    """Grid point minimizing the operator's spectral radius; ties go to the smaller step."""
    gammas = DEFAULT_GRID if gammas is None else np.asarray(list(gammas), dtype=np.float64)
    if gammas.size == 0:
        raise SpectralError("empty step-size grid")
    order = np.argsort(gammas, kind="stable")
    gammas = gammas[order]
    mats = np.stack([build_operator(scheme, A, g).matrix for g in gammas])
    rho = spectral_radii(mats)
    j = int(np.argmin(rho))  # first minimum = smallest gamma
    return float(gammas[j]), float(rho[j])


@dataclass
class RadiusRow:
    alpha: float
    mu: float
    game_seed: int
    scheme: str
    gamma_star: float
    rho_star: float
    rho_ratio_to_full_median: float = math.nan


def study_payoff(alpha: float, mu: float, game_seed: int, d: int = 3) -> np.ndarray:
    return synthesize_payoff(GameSynthesisParams(2, d, alpha, mu, game_seed))


def radius_study(alphas: Iterable[float], mus: Iterable[float], games: int = 100, seed: int = 0,
                 d: int = 3, gammas: Optional[Sequence[float]] = None) -> list:
    """Minimized radii of every scheme on ``games`` random 2-player games per (alpha, mu) cell.

    Game seeds depend only on ``seed`` and the game index, so cells share the
    underlying Gaussian draws.
    """
    rows = []
    for alpha in alphas:
        for mu in mus:
            cell = []
            for g in range(games):
                gs = derive_seed(seed, g)
                A = study_payoff(alpha, mu, gs, d)
                for scheme in SCHEMES:
                    gamma, rho = min_radius_over_grid(scheme, A, gammas)
                    cell.append(RadiusRow(float(alpha), float(mu), gs, scheme, gamma, rho))
            med = float(np.median([r.rho_star for r in cell if r.scheme == FULL]))
            for r in cell:
                r.rho_ratio_to_full_median = r.rho_star / med if med > 0 else math.nan
            rows.extend(cell)
    return rows


CSV_FIELDS = ["alpha", "mu", "game_seed", "scheme", "gamma_star", "rho_star", "rho_ratio_to_full_median"]


def rows_to_csv(rows: Sequence[RadiusRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow([repr(r.alpha), repr(r.mu), r.game_seed, r.scheme, repr(r.gamma_star),
                    repr(r.rho_star), repr(r.rho_ratio_to_full_median)])
    return buf.getvalue()


def summarize(rows: Sequence[RadiusRow]) -> list:
    """Per (alpha, mu, scheme): mean and median radius, median ratio to full EG."""
    out = []
    keys = sorted({(r.alpha, r.mu) for r in rows})
    for alpha, mu in keys:
        for scheme in SCHEMES:
            sel = [r for r in rows if r.alpha == alpha and r.mu == mu and r.scheme == scheme]
            if not sel:
                continue
            rho = np.array([r.rho_star for r in sel])
            ratio = np.array([r.rho_ratio_to_full_median for r in sel])
            out.append({"alpha": alpha, "mu": mu, "scheme": scheme, "games": len(sel),
                        "mean_rho": float(rho.mean()), "median_rho": float(np.median(rho)),
                        "median_ratio": float(np.median(ratio))})
    return out


def cyclic_decay(A, gamma: float, rounds: int = 200, seed: int = 0, burn_in: Optional[int] = None):
    """Run cyclic DSEG (b=1) on the unconstrained bilinear game with payoff A.

    Returns the fitted per-round decay exponent of ||theta|| and log rho of the
    matching cyclic operator. The solver rescales a single sampled player's
    gradient by n/b = 2, so its step ``gamma`` corresponds to operator step
    ``2 * gamma``.
    """
    from .games import bilinear_game
    from .geometry import Geometry
    from .solvers import Schedule, SolverConfig, init_state, step

    A = _check(A)
    h = A.shape[0] // 2
    game = bilinear_game(A, [h, h])
    geom = Geometry.unconstrained(game.layout)
    cfg = SolverConfig(method="dseg", sampler="cyclic", seed=seed, init="random")
    state = init_state(game, cfg)
    sched = Schedule.constant(gamma)
    logs = [math.log(np.linalg.norm(state.theta))]
    for _ in range(rounds):
        step(game, geom, state, sched)
        step(game, geom, state, sched)  # two iterations = four gradient evaluations
        logs.append(math.log(np.linalg.norm(state.theta)))
    logs = np.array(logs)
    start = rounds // 2 if burn_in is None else burn_in
    x = np.arange(start, rounds + 1, dtype=float)
    y = logs[start:]
    x -= x.mean()
    rate = float(x @ (y - y.mean()) / (x @ x))
    rho = spectral_radius(build_operator(CYCLIC, A, 2.0 * gamma).matrix)
    return rate, math.log(rho)
