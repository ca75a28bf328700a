"""Constraint geometries: Euclidean projection and the entropic mirror map."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .games import SIMPLEX, PlayerLayout, QuadraticGame

EUCLIDEAN_SIMPLEX = "euclidean_simplex"
ENTROPY_SIMPLEX = "entropy_simplex"
EUCLIDEAN_UNCONSTRAINED = "euclidean_unconstrained"

ENTROPY_FLOOR = 1e-300


class DomainError(ValueError):
    pass


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based).

    Accepts a vector or a 2-D array, in which case every row is projected.
    """
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise DomainError("cannot project non-finite vector")
    V = np.atleast_2d(v)
    m = V.shape[1]
    U = -np.sort(-V, axis=1)
    css = np.cumsum(U, axis=1) - 1.0
    ind = np.arange(1, m + 1)
    rho = np.count_nonzero(U - css / ind > 0, axis=1)
    tau = css[np.arange(V.shape[0]), rho - 1] / rho
    W = np.maximum(V - tau[:, None], 0.0)
    return W.reshape(v.shape)


@dataclass(frozen=True)
class Geometry:
    """Mirror geometry on a product of per-player domains.

    ``omega`` is the potential gap fed to the theoretical step sizes
    (``sum_i log d_i`` for entropy, the squared diameter ``2n`` for the
    Euclidean simplex product). ``diameter`` keeps the Euclidean diameter.
    """

    kind: str
    layout: PlayerLayout
    omega: float
    diameter: float

    @classmethod
    def entropy(cls, layout: PlayerLayout) -> "Geometry":
        return cls(ENTROPY_SIMPLEX, layout, float(np.sum(np.log(layout.dims))),
                   float(np.sqrt(2 * layout.n)))

    @classmethod
    def euclidean_simplex(cls, layout: PlayerLayout) -> "Geometry":
        return cls(EUCLIDEAN_SIMPLEX, layout, 2.0 * layout.n, float(np.sqrt(2 * layout.n)))

    @classmethod
    def unconstrained(cls, layout: PlayerLayout, omega: float = 1.0) -> "Geometry":
        return cls(EUCLIDEAN_UNCONSTRAINED, layout, float(omega), float(np.sqrt(omega)))

    @classmethod
    def for_game(cls, game: QuadraticGame, mirror: Optional[str] = None,
                 omega: float = 1.0) -> "Geometry":
        """Default geometry: entropy on simplex games, identity otherwise."""
        if game.geometry != SIMPLEX:
            return cls.unconstrained(game.layout, omega)
        if mirror in (None, "entropy"):
            return cls.entropy(game.layout)
        if mirror == "euclidean":
            return cls.euclidean_simplex(game.layout)
        raise ValueError(f"unknown mirror map {mirror!r}")

    @property
    def constrained(self) -> bool:
        return self.kind != EUCLIDEAN_UNCONSTRAINED

    def center(self) -> np.ndarray:
        return self.layout.centers()

    def _rows(self, x: np.ndarray):
        """View x as (n, d_i) when player dimensions agree, else None."""
        m = self.layout.equal_dims
        return None if m is None else x.reshape(self.layout.n, m)

    def prox(self, z: np.ndarray, xi: np.ndarray) -> np.ndarray:
        return prox_map(self, z, xi)


def _entropy_step(z: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Row-wise ``z * exp(-xi)`` renormalized; shifting by min(xi) keeps it in range."""
    w = z * np.exp(xi.min(axis=1, keepdims=True) - xi)
    w /= w.sum(axis=1, keepdims=True)
    return np.maximum(w, ENTROPY_FLOOR)


def block_prox(kind: str, z: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Prox on a stack of single-player blocks, ``z`` and ``xi`` of shape (rows, m)."""
    if kind == EUCLIDEAN_UNCONSTRAINED:
        return z - xi
    if kind == ENTROPY_SIMPLEX:
        if z.min() <= 0:
            raise DomainError("entropic prox needs strictly positive blocks")
        return _entropy_step(z, xi)
    if kind == EUCLIDEAN_SIMPLEX:
        return project_simplex(z - xi)
    raise ValueError(f"unknown geometry kind {kind!r}")


def prox_map(geometry: Geometry, z: np.ndarray, xi: np.ndarray, players=None) -> np.ndarray:
    """Prox-mapping ``argmin_u <xi, u> + D(u, z)`` for the geometry's mirror map.

    The caller folds the step size into ``xi``. Passing ``players`` restricts
    the computation to those blocks and copies the others from ``z``, which is
    exact when ``xi`` vanishes outside them and ``z`` is feasible.
    """
    kind = geometry.kind
    if kind == EUCLIDEAN_UNCONSTRAINED:
        return z - xi
    layout = geometry.layout
    if players is not None and len(players) < layout.n:
        out = z.copy()
        for i in players:
            s = layout.slice(i)
            out[s] = block_prox(kind, z[s][None], xi[s][None])[0]
        return out
    rows = geometry._rows(z)
    if rows is not None:
        return block_prox(kind, rows, geometry._rows(xi)).ravel()
    return np.concatenate([block_prox(kind, z[s][None], xi[s][None])[0]
                           for s in map(layout.slice, range(layout.n))])


def neg_entropy(u: np.ndarray) -> float:
    u = np.asarray(u)
    return float(np.sum(np.where(u > 0, u * np.log(np.where(u > 0, u, 1.0)), 0.0)))


def bregman_entropy(u: np.ndarray, z: np.ndarray) -> float:
    """D(u, z) for the negative entropy on a product of simplices."""
    u = np.asarray(u)
    z = np.asarray(z)
    return neg_entropy(u) - neg_entropy(z) - float((np.log(z) + 1.0) @ (u - z))
