"""Functional Nash error, convergence slopes and trace aggregation."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .games import BILINEAR, SIMPLEX, QuadraticGame
from .geometry import Geometry, project_simplex

DEFAULT_TOL = 1e-6
DEFAULT_BUDGET = 5000


class MetricError(RuntimeError):
    pass


@dataclass
class NashErrorReport:
    total: float
    per_player: np.ndarray
    inner_iters: np.ndarray
    inner_gap: np.ndarray
    certified: bool = True

    @property
    def max_gap(self) -> float:
        return float(np.max(self.inner_gap)) if len(self.inner_gap) else 0.0


# -- inner problem: min_{z in simplex} z^T Q z + b^T z + lam * ||z - c||_1 -----------
#
# Every helper below works on a batch of p players sharing the dimension m:
# Q is (p, m, m), b is (p, m), z is (p, m).


def _objective(Q, b, lam, z):
    c = 1.0 / z.shape[1]
    val = np.einsum("pi,pij,pj->p", z, Q, z) + np.einsum("pi,pi->p", b, z)
    if lam:
        val = val + lam * np.abs(z - c).sum(axis=1)
    return val


def _smooth_grad(S, b, z):
    return np.einsum("pij,pj->pi", S, z) + b


def linear_l1_min(g: np.ndarray, lam: float):
    """``min_{u in simplex} <g, u> + lam ||u - 1/m||_1`` row-wise, exactly.

    The objective is separable, convex and piecewise linear, so greedily filling
    the unit mass along the cheapest slopes is optimal. Returns (value, argmin).
    """
    g = np.atleast_2d(g)
    p, m = g.shape
    if lam == 0:
        j = np.argmin(g, axis=1)
        u = np.zeros_like(g)
        u[np.arange(p), j] = 1.0
        return g[np.arange(p), j], u
    c = 1.0 / m
    slopes = np.concatenate([g - lam, g + lam], axis=1)
    lengths = np.concatenate([np.full((p, m), c), np.full((p, m), 1.0 - c)], axis=1)
    order = np.argsort(slopes, axis=1, kind="stable")
    s = np.take_along_axis(slopes, order, axis=1)
    ln = np.take_along_axis(lengths, order, axis=1)
    before = np.cumsum(ln, axis=1) - ln
    take = np.clip(1.0 - before, 0.0, ln)
    value = lam * c * m + (s * take).sum(axis=1)
    filled = np.zeros_like(take)
    np.put_along_axis(filled, order, take, axis=1)
    return value, filled[:, :m] + filled[:, m:]


def prox_l1_simplex(v: np.ndarray, kappa) -> np.ndarray:
    """Row-wise ``argmin_{u in simplex} 1/2 ||u - v||^2 + kappa ||u - 1/m||_1``.

    For a multiplier ``nu`` on the sum constraint each coordinate is
    ``max(0, c + shrink(v + nu - c, kappa))``, a nondecreasing piecewise-linear
    function of ``nu``; the root of ``sum = 1`` is located among its breakpoints.
    ``kappa`` is a scalar or one value per row.
    """
    v = np.atleast_2d(v)
    p, m = v.shape
    kappa = np.broadcast_to(np.asarray(kappa, dtype=np.float64), (p,))
    if not np.any(kappa):
        return project_simplex(v)
    c = 1.0 / m
    kap = kappa[:, None]

    def coords(nu):
        w = v[:, None, :] + nu[..., None] - c
        return np.maximum(0.0, c + np.sign(w) * np.maximum(np.abs(w) - kap[..., None], 0.0))

    bps = np.concatenate([-kap - v, c - kap - v, c + kap - v], axis=1)
    bps.sort(axis=1)
    sums = coords(bps).sum(axis=2)
    beyond = sums[:, -1] < 1.0
    k = np.where(beyond, bps.shape[1] - 1, np.maximum(np.argmax(sums >= 1.0, axis=1), 1))
    rows = np.arange(p)
    lo, hi = bps[rows, k - 1], bps[rows, k]
    slo, shi = sums[rows, k - 1], sums[rows, k]
    with np.errstate(invalid="ignore", divide="ignore"):
        nu = np.where(beyond, bps[:, -1] + (1.0 - sums[:, -1]) / m,
                      lo + (1.0 - slo) * (hi - lo) / (shi - slo))
    return coords(nu[:, None])[:, 0, :]


def fw_gap(Q, S, b, lam, z):
    """Certified bound on ``f(z) - min f`` (linearize the quadratic, keep the L1 term)."""
    g = _smooth_grad(S, b, z)
    c = 1.0 / z.shape[1]
    phi, _ = linear_l1_min(g, lam)
    return np.einsum("pi,pi->p", g, z) + lam * np.abs(z - c).sum(axis=1) - phi


def solve_inner_simplex(Q, b, lam, z0, tol=DEFAULT_TOL, budget=DEFAULT_BUDGET, check_every=5):
    """Batched best responses on the simplex by restarted accelerated prox-gradient.

    Returns ``(values, argmins, iterations, gaps)``; ``values`` never exceed the
    objective at ``z0``.
    """
    S = Q + np.transpose(Q, (0, 2, 1))
    p = Q.shape[0]
    L = np.linalg.norm(S, ord=2, axis=(1, 2))
    linear = L == 0
    z_best = z0.copy()
    f_best = _objective(Q, b, lam, z0)
    iters = np.zeros(p, dtype=int)
    gaps = np.full(p, np.inf)

    if linear.any():
        vals, u = linear_l1_min(b[linear], lam)
        better = vals < f_best[linear]
        idx = np.flatnonzero(linear)
        z_best[idx[better]] = u[better]
        f_best[idx] = np.minimum(vals, f_best[idx])
        gaps[linear] = np.maximum(fw_gap(Q[linear], S[linear], b[linear], lam, z_best[linear]), 0.0)
    active = np.flatnonzero(~linear)
    if active.size == 0:
        return f_best, z_best, iters, gaps

    Qa, Sa, ba = Q[active], S[active], b[active]
    eta = (1.0 / L[active])[:, None]
    z = z0[active].copy()
    y = z.copy()
    t = np.ones(active.size)
    zb, fb = z.copy(), f_best[active].copy()
    ga = np.maximum(fw_gap(Qa, Sa, ba, lam, zb), 0.0)
    it = 0
    while it < budget and np.any(ga > tol):
        it += 1
        grad = _smooth_grad(Sa, ba, y)
        v = y - eta * grad
        z_new = prox_l1_simplex(v, eta[:, 0] * lam) if lam else project_simplex(v)
        restart = np.einsum("pi,pi->p", y - z_new, z_new - z) > 0
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        mom = np.where(restart, 0.0, (t - 1.0) / t_new)
        y = z_new + mom[:, None] * (z_new - z)
        t = np.where(restart, 1.0, t_new)
        z = z_new
        f = _objective(Qa, ba, lam, z)
        improved = f < fb
        zb[improved] = z[improved]
        fb = np.minimum(f, fb)
        if it % check_every == 0 or it == budget:
            open_ = ga > tol
            ga[open_] = np.maximum(fw_gap(Qa[open_], Sa[open_], ba[open_], lam, zb[open_]), 0.0)
            iters[active[open_]] = it
    z_best[active] = zb
    f_best[active] = fb
    gaps[active] = ga
    return f_best, z_best, iters, gaps


def _unconstrained_min(H, b):
    """min_z 1/2 z^T H z + b^T z for symmetric PSD H; -inf when unbounded."""
    w, U = np.linalg.eigh(H)
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    coef = U.T @ b
    pos = w > 1e-12 * scale
    if np.any(w < -1e-12 * scale):
        return -np.inf
    if np.any(np.abs(coef[~pos]) > 1e-12 * max(1.0, float(np.abs(b).max(initial=0.0)))):
        return -np.inf
    return float(-0.5 * np.sum(coef[pos] ** 2 / w[pos]))


def nash_error(game: QuadraticGame, geometry: Optional[Geometry], theta: np.ndarray,
               tol: float = DEFAULT_TOL, budget: int = DEFAULT_BUDGET) -> NashErrorReport:
    """Sum over players of ``loss_i(theta) - min_z loss_i(z, theta_-i)``.

    Simplex games solve each best response to a certified gap ``<= tol``;
    ``certified`` is False when some solve ran out of budget first.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    theta = np.asarray(theta, dtype=np.float64)
    layout = game.layout
    n = layout.n
    A = game.payoff
    per = np.zeros(n)
    iters = np.zeros(n, dtype=int)
    gaps = np.zeros(n)
    own = [layout.slice(i) for i in range(n)]
    cross = np.empty(game.d)
    for i, s in enumerate(own):
        cross[s] = A[s] @ theta - A[s, s] @ theta[s]

    if game.geometry != SIMPLEX:
        if game.reg_l1:
            raise MetricError("Nash error of unconstrained games requires reg_l1 = 0")
        for i, s in enumerate(own):
            Q = A[s, s]
            H = 0.5 * (Q + Q.T) if game.own_term == BILINEAR else Q + Q.T
            current = game.loss(i, theta)
            per[i] = current - _unconstrained_min(H, cross[s])
        return NashErrorReport(float(per.sum()), per, iters, gaps, True)

    if not game.in_domain(theta, atol=1e-7):
        raise MetricError("strategy is not feasible")
    groups = {}
    for i, m in enumerate(layout.dims):
        groups.setdefault(m, []).append(i)
    for m, players in groups.items():
        Q = np.stack([A[own[i], own[i]] for i in players])
        b = np.stack([cross[own[i]] for i in players])
        z0 = np.stack([theta[own[i]] for i in players])
        current = _objective(Q, b, game.reg_l1, z0)
        vals, _, it, gp = solve_inner_simplex(Q, b, game.reg_l1, z0, tol, budget)
        per[players] = current - vals
        iters[players] = it
        gaps[players] = gp
    certified = bool(np.all(gaps <= tol))
    return NashErrorReport(float(per.sum()), per, iters, gaps, certified)


# -- traces --------------------------------------------------------------------------


@dataclass
class Trace:
    """Nash error of the averaged iterate at gradient-computation checkpoints."""

    k: np.ndarray
    err: np.ndarray
    inner_gap: np.ndarray
    elapsed: np.ndarray
    err_std: Optional[np.ndarray] = None
    err_last: Optional[np.ndarray] = None
    failures: list = field(default_factory=list)
    final_theta: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.k)

    @property
    def final_err(self) -> float:
        return float(self.err[-1]) if len(self.err) else math.nan

    def same_values(self, other: "Trace") -> bool:
        """Bitwise equality of everything except wall-clock timings."""
        return (np.array_equal(self.k, other.k) and np.array_equal(self.err, other.err)
                and np.array_equal(self.inner_gap, other.inner_gap)
                and (self.final_theta is None) == (other.final_theta is None)
                and (self.final_theta is None or np.array_equal(self.final_theta, other.final_theta)))

    def to_csv(self, timing: bool = True) -> str:
        """CSV text with columns ``k, err, err_std, inner_gap_max, elapsed_s``.

        With ``timing=False`` the elapsed column is left empty so that the file
        only depends on the run's seed and configuration.
        """
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "err", "err_std", "inner_gap_max", "elapsed_s"])
        std = self.err_std if self.err_std is not None else np.ones(len(self.k))
        for j in range(len(self.k)):
            w.writerow([int(self.k[j]), repr(float(self.err[j])), repr(float(std[j])),
                        repr(float(self.inner_gap[j])),
                        repr(float(self.elapsed[j])) if timing else ""])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Trace":
        rows = list(csv.DictReader(io.StringIO(text)))
        col = lambda name: np.array([float(r[name]) if r[name] != "" else math.nan for r in rows])
        return cls(col("k").astype(np.int64), col("err"), col("inner_gap_max"),
                   col("elapsed_s"), err_std=col("err_std"))


def slope(trace: Trace, decades: float = 1.0, min_points: int = 5) -> float:
    """Least-squares slope of log err against log k over the last ``decades`` decades of k."""
    k = np.asarray(trace.k, dtype=float)
    err = np.asarray(trace.err, dtype=float)
    if k.size == 0:
        raise MetricError("empty trace")
    sel = k >= k.max() / 10.0 ** decades
    k, err = k[sel], err[sel]
    if k.size < min_points:
        raise MetricError(f"only {k.size} checkpoints in the slope window")
    if np.any(~np.isfinite(err)) or np.any(err <= 0):
        raise MetricError("slope window contains non-positive errors")
    x = np.log(k)
    y = np.log(err)
    if np.ptp(x) == 0:
        raise MetricError("degenerate slope window")
    x = x - x.mean()
    return float(x @ (y - y.mean()) / (x @ x))


def aggregate(traces: Sequence[Trace]) -> Trace:
    """Geometric mean and multiplicative std of errors across traces.

    Traces are interpolated (log-log) onto the checkpoints of the first trace
    that every trace covers.
    """
    traces = list(traces)
    if not traces:
        raise MetricError("nothing to aggregate")
    grid = np.asarray(traces[0].k)
    lo = max(float(np.min(t.k)) for t in traces)
    hi = min(float(np.max(t.k)) for t in traces)
    grid = grid[(grid >= lo) & (grid <= hi)]
    logs, gaps, elapsed = [], [], []
    for t in traces:
        tk = np.asarray(t.k, dtype=float)
        if np.array_equal(tk, grid):
            le, gp, el = np.log(t.err), t.inner_gap, t.elapsed
        else:
            lk = np.log(tk)
            le = np.interp(np.log(grid), lk, np.log(t.err))
            gp = np.interp(np.log(grid), lk, t.inner_gap)
            el = np.interp(np.log(grid), lk, t.elapsed)
        logs.append(le)
        gaps.append(gp)
        elapsed.append(el)
    logs = np.array(logs)
    with np.errstate(invalid="ignore"):
        mean = np.exp(logs.mean(axis=0))
        std = np.exp(logs.std(axis=0))
    if len(traces) == 1:
        mean = np.asarray(traces[0].err)[: len(grid)] if np.array_equal(traces[0].k, grid) else mean
    return Trace(grid.copy(), mean, np.max(gaps, axis=0), np.mean(elapsed, axis=0), err_std=std)
