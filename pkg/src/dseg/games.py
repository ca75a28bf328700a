"""Convex n-player quadratic games.

A game stacks the strategies of all players in a single vector of dimension
``d = sum(dims)``. Player ``i`` owns the contiguous block
``x[offsets[i]:offsets[i] + dims[i]]``. Strategies are plain 1-D numpy arrays;
the layout is carried by the game.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .rng import make_rng

SIMPLEX = "simplex"
UNCONSTRAINED = "unconstrained"
FULL = "full"
BILINEAR = "bilinear"


class SynthesisError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlayerLayout:
    dims: tuple

    def __post_init__(self):
        dims = tuple(int(x) for x in self.dims)
        if len(dims) < 1 or min(dims) < 1:
            raise ValueError(f"invalid player dimensions {dims}")
        object.__setattr__(self, "dims", dims)

    @classmethod
    def uniform(cls, n: int, d: int) -> "PlayerLayout":
        return cls((d,) * n)

    @property
    def n(self) -> int:
        return len(self.dims)

    @cached_property
    def offsets(self) -> tuple:
        return tuple(int(o) for o in np.concatenate([[0], np.cumsum(self.dims)[:-1]]))

    @property
    def d(self) -> int:
        return int(sum(self.dims))

    @cached_property
    def equal_dims(self) -> Optional[int]:
        """Common block dimension, or None when players differ."""
        return self.dims[0] if len(set(self.dims)) == 1 else None

    @cached_property
    def _slices(self) -> tuple:
        return tuple(slice(o, o + m) for o, m in zip(self.offsets, self.dims))

    def slice(self, i: int) -> slice:
        if not 0 <= i < len(self.dims):
            raise IndexError(f"player index {i} out of range for {self.n} players")
        return self._slices[i]

    def block(self, x: np.ndarray, i: int) -> np.ndarray:
        return x[self.slice(i)]

    def blocks(self, x: np.ndarray) -> list:
        return [x[self.slice(i)] for i in range(self.n)]

    def indices(self, players: Sequence[int]) -> np.ndarray:
        """Coordinates of the given players in the stacked vector."""
        return np.concatenate([np.arange(self.slice(i).start, self.slice(i).stop)
                               for i in players]).astype(np.intp)

    def centers(self) -> np.ndarray:
        """Stacked vector whose block i is the simplex center 1/d_i."""
        return np.concatenate([np.full(di, 1.0 / di) for di in self.dims])

    def player_of(self) -> np.ndarray:
        """Owner player index for every coordinate."""
        return np.repeat(np.arange(self.n), self.dims)


@dataclass(frozen=True)
class GameSynthesisParams:
    n: int
    d: int
    alpha: float
    mu: float
    seed: int

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"skewness alpha must lie in [0, 1], got {self.alpha}")
        if not self.mu > 0:
            raise ValueError(f"conditioning mu must be positive, got {self.mu}")
        PlayerLayout.uniform(self.n, self.d)

    @property
    def layout(self) -> PlayerLayout:
        return PlayerLayout.uniform(self.n, self.d)


@dataclass(frozen=True)
class QuadraticGame:
    """Quadratic game with losses ``theta_i^T A_i theta`` (+ ``lambda`` L1 term).

    ``own_term="full"`` gives the regularized matrix-game loss
    ``theta_i^T A_i theta + reg_l1 * ||theta_i - 1/d_i||_1``; ``"bilinear"``
    subtracts half the own quadratic term, so that the gradient of player i
    is the block row ``A_i theta`` (unconstrained, unregularized only).
    """

    layout: PlayerLayout
    payoff: np.ndarray
    reg_l1: float = 0.0
    noise_std: float = 0.0
    geometry: str = SIMPLEX
    own_term: str = FULL
    synthesis: Optional[GameSynthesisParams] = field(default=None, compare=False)

    def __post_init__(self):
        A = np.array(self.payoff, dtype=np.float64)
        d = self.layout.d
        if A.shape != (d, d):
            raise ValueError(f"payoff must be {d}x{d}, got {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ValueError("payoff has non-finite entries")
        if self.reg_l1 < 0 or self.noise_std < 0:
            raise ValueError("reg_l1 and noise_std must be non-negative")
        if self.geometry not in (SIMPLEX, UNCONSTRAINED):
            raise ValueError(f"unknown geometry {self.geometry!r}")
        if self.own_term not in (FULL, BILINEAR):
            raise ValueError(f"unknown own_term {self.own_term!r}")
        if self.own_term == BILINEAR and (self.geometry != UNCONSTRAINED or self.reg_l1 != 0):
            raise ValueError("bilinear own term requires an unconstrained game with reg_l1 = 0")
        A.setflags(write=False)
        object.__setattr__(self, "payoff", A)
        object.__setattr__(self, "reg_l1", float(self.reg_l1))
        object.__setattr__(self, "noise_std", float(self.noise_std))

    def __eq__(self, other):
        if not isinstance(other, QuadraticGame):
            return NotImplemented
        return (self.layout == other.layout and np.array_equal(self.payoff, other.payoff)
                and self.reg_l1 == other.reg_l1 and self.noise_std == other.noise_std
                and self.geometry == other.geometry and self.own_term == other.own_term)

    __hash__ = None

    @property
    def n(self) -> int:
        return self.layout.n

    @property
    def d(self) -> int:
        return self.layout.d

    def own_block(self, i: int) -> np.ndarray:
        s = self.layout.slice(i)
        return self.payoff[s, s]

    @cached_property
    def jacobian(self) -> np.ndarray:
        """Matrix J with F(theta) = J theta (+ the L1 subgradient)."""
        J = self.payoff.copy()
        if self.own_term == FULL:
            for i in range(self.n):
                s = self.layout.slice(i)
                J[s, s] += self.payoff[s, s].T
        J.setflags(write=False)
        return J

    @cached_property
    def _centers(self) -> np.ndarray:
        return self.layout.centers()

    def with_noise(self, noise_std: float) -> "QuadraticGame":
        return QuadraticGame(self.layout, self.payoff, self.reg_l1, noise_std,
                             self.geometry, self.own_term, self.synthesis)

    def in_domain(self, theta: np.ndarray, atol: float = 1e-9) -> bool:
        theta = np.asarray(theta)
        if theta.shape != (self.d,) or not np.all(np.isfinite(theta)):
            return False
        if self.geometry == UNCONSTRAINED:
            return True
        return all(b.min() >= -atol and abs(b.sum() - 1.0) <= atol
                   for b in self.layout.blocks(theta))

    # losses and gradients -------------------------------------------------

    def loss(self, i: int, theta: np.ndarray) -> float:
        s = self.layout.slice(i)
        xi = theta[s]
        val = float(xi @ (self.payoff[s] @ theta))
        if self.own_term == BILINEAR:
            return val - 0.5 * float(xi @ self.payoff[s, s] @ xi)
        if self.reg_l1:
            val += self.reg_l1 * float(np.abs(xi - self._centers[s]).sum())
        return val

    def losses(self, theta: np.ndarray) -> np.ndarray:
        return np.array([self.loss(i, theta) for i in range(self.n)])

    def subgradient(self, i: int, theta: np.ndarray) -> np.ndarray:
        """Gradient of player i's loss w.r.t. its own block (sgn(0) = 0 at kinks)."""
        s = self.layout.slice(i)
        g = self.jacobian[s] @ theta
        if self.reg_l1:
            g += self.reg_l1 * np.sign(theta[s] - self._centers[s])
        return g

    def rows_gradient(self, rows, theta: np.ndarray) -> np.ndarray:
        """Stacked subgradients restricted to coordinates ``rows`` (slice or index array)."""
        g = self.jacobian[rows] @ theta
        if self.reg_l1:
            g += self.reg_l1 * np.sign(theta[rows] - self._centers[rows])
        return g

    def simultaneous_gradient(self, theta: np.ndarray) -> np.ndarray:
        return self.rows_gradient(slice(None), theta)

    def noisy_gradient(self, i: int, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        g = self.subgradient(i, theta)
        if self.noise_std:
            g += self.noise_std * rng.standard_normal(g.shape[0])
        return g

    # constants used by step-size rules ----------------------------------

    def sample_domain(self, rng: np.random.Generator, size: int, radius: float = 1.0) -> np.ndarray:
        """Random points of the domain, one per row.

        Simplex games draw each block from a flat Dirichlet; unconstrained games
        draw Gaussian points rescaled into the ball of the given radius.
        """
        if self.geometry == SIMPLEX:
            return np.hstack([rng.dirichlet(np.ones(di), size=size) for di in self.layout.dims])
        x = rng.standard_normal((size, self.d))
        u = rng.random(size) ** (1.0 / self.d)
        return radius * x * (u / np.linalg.norm(x, axis=1))[:, None]

    def gradient_bounds(self, rng: np.random.Generator, samples: int = 10_000,
                        margin: float = 1.1, radius: float = 1.0) -> np.ndarray:
        """Per-player bounds G_i on subgradient norms, estimated by sampling."""
        X = self.sample_domain(rng, samples, radius)
        F = X @ self.jacobian.T
        if self.reg_l1:
            F += self.reg_l1 * np.sign(X - self._centers)
        sq = np.add.reduceat(F ** 2, list(self.layout.offsets), axis=1)
        return margin * np.sqrt(sq.max(axis=0))

    def gradient_bound(self, rng: np.random.Generator, **kw) -> float:
        """Aggregate bound G = sqrt(sum_i G_i^2 / n)."""
        Gi = self.gradient_bounds(rng, **kw)
        return float(np.sqrt(np.mean(Gi ** 2)))

    def lipschitz(self) -> float:
        """max_i ||J_i||_2, a smoothness constant for every player's gradient."""
        return max(float(np.linalg.norm(self.jacobian[self.layout.slice(i)], 2))
                   for i in range(self.n))

    def monotonicity_probe(self, rng: np.random.Generator, pairs: int = 100) -> float:
        """Smallest <F(x) - F(y), x - y> over random domain pairs."""
        X = self.sample_domain(rng, pairs)
        Y = self.sample_domain(rng, pairs)
        worst = np.inf
        for x, y in zip(X, Y):
            gap = float((self.simultaneous_gradient(x) - self.simultaneous_gradient(y)) @ (x - y))
            worst = min(worst, gap)
        return worst

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        out = {
            "n": self.n,
            "dims": list(self.layout.dims),
            "payoff": [float(v) for v in self.payoff.ravel()],
            "reg_l1": self.reg_l1,
            "noise_std": self.noise_std,
            "geometry": self.geometry,
            "own_term": self.own_term,
            "synthesis": None,
        }
        if self.synthesis is not None:
            p = self.synthesis
            out["synthesis"] = {"alpha": p.alpha, "mu": p.mu, "seed": p.seed}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "QuadraticGame":
        layout = PlayerLayout(tuple(data["dims"]))
        if int(data["n"]) != layout.n:
            raise ValueError("n does not match dims")
        payoff = np.asarray(data["payoff"], dtype=np.float64).reshape(layout.d, layout.d)
        synth = data.get("synthesis")
        params = None
        if synth and layout.equal_dims is not None:
            params = GameSynthesisParams(layout.n, layout.equal_dims, synth["alpha"],
                                         synth["mu"], synth["seed"])
        return cls(layout, payoff, data.get("reg_l1", 0.0), data.get("noise_std", 0.0),
                   data.get("geometry", SIMPLEX), data.get("own_term", FULL), params)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "QuadraticGame":
        return cls.from_dict(json.loads(Path(path).read_text()))


def synthesize_payoff(params: GameSynthesisParams) -> np.ndarray:
    """Random payoff ``(1 - alpha) A_sym + alpha A_skew``.

    ``A_sym`` is a symmetrized Gaussian matrix shifted so that its smallest
    eigenvalue equals ``mu``; ``A_skew`` is an antisymmetrized Gaussian matrix.
    """
    D = params.n * params.d
    rng = make_rng(params.seed)
    G = rng.standard_normal((D, D))
    F = rng.standard_normal((D, D))
    sym = 0.5 * (G + G.T)
    skew = 0.5 * (F - F.T)
    eig = np.linalg.eigvalsh(sym)
    if not np.all(np.isfinite(eig)):
        raise SynthesisError("eigenvalue computation returned non-finite values")
    sym[np.diag_indices(D)] += params.mu - eig[0]
    if params.alpha == 1.0:
        return skew
    if params.alpha == 0.0:
        return sym
    return (1.0 - params.alpha) * sym + params.alpha * skew


def synthesize_game(params: GameSynthesisParams, reg_l1: float = 0.0, noise_std: float = 0.0,
                    geometry: str = SIMPLEX, own_term: str = FULL) -> QuadraticGame:
    return QuadraticGame(params.layout, synthesize_payoff(params), reg_l1, noise_std,
                         geometry, own_term, params)


RPS_PAYOFF = np.array([[0.0, 1.0, -1.0],
                       [-1.0, 0.0, 1.0],
                       [1.0, -1.0, 0.0]])


def rock_paper_scissors(noise_std: float = 0.0) -> QuadraticGame:
    """Zero-sum rock-paper-scissors; the uniform profile is the unique equilibrium."""
    A = np.zeros((6, 6))
    A[:3, 3:] = RPS_PAYOFF
    A[3:, :3] = -RPS_PAYOFF.T
    return QuadraticGame(PlayerLayout.uniform(2, 3), A, noise_std=noise_std)


def bilinear_game(payoff: np.ndarray, dims: Sequence[int]) -> QuadraticGame:
    """Unconstrained game whose simultaneous gradient is ``payoff @ theta``."""
    return QuadraticGame(PlayerLayout(tuple(dims)), payoff, geometry=UNCONSTRAINED,
                         own_term=BILINEAR)
