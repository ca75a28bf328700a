"""Player sampling and player-sampled gradient oracles."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .games import QuadraticGame


class SamplerConfigError(ValueError):
    pass


class VrStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlayerMask:
    """Players whose gradient is evaluated, and the n/b rescaling."""

    selected: tuple
    n: int

    def __post_init__(self):
        sel = tuple(sorted(int(i) for i in self.selected))
        if not sel or len(set(sel)) != len(sel) or sel[0] < 0 or sel[-1] >= self.n:
            raise SamplerConfigError(f"invalid player selection {self.selected} for n={self.n}")
        object.__setattr__(self, "selected", sel)

    @classmethod
    def full(cls, n: int) -> "PlayerMask":
        return cls(tuple(range(n)), n)

    @property
    def b(self) -> int:
        return len(self.selected)

    @property
    def scale(self) -> float:
        return self.n / self.b

    @property
    def is_full(self) -> bool:
        return self.b == self.n

    def contains(self, i: int) -> bool:
        return i in self.selected


@dataclass
class GradientEstimate:
    values: np.ndarray
    mask: PlayerMask


def parse_sampler(spec: str, n: int):
    """Parse ``full``, ``uniform:b`` or ``cyclic`` into ``(kind, b)``."""
    spec = spec.strip().lower()
    if spec == "full":
        return "full", n
    if spec == "cyclic":
        return "cyclic", 1
    if spec.startswith("uniform"):
        _, _, b = spec.partition(":")
        try:
            b = int(b) if b else 1
        except ValueError:
            raise SamplerConfigError(f"bad batch size in sampler spec {spec!r}") from None
        return "uniform", b
    raise SamplerConfigError(f"unknown sampler {spec!r}")


CHUNK = 256


class Sampler:
    """Draws a pair of player masks (extrapolation, update) per iteration.

    Kinds:

    ``full``
        every player in both steps.
    ``uniform``
        two independent uniform ``b``-subsets. Each subset consumes a fixed
        number of uniforms (one when ``b = 1``, else ``n``, ranked), so the
        player sequence does not depend on how draws are buffered.
    ``cyclic``
        walks a shuffled schedule of the ``n(n-1)`` ordered pairs ``(i, j)``,
        extrapolating ``i`` and updating ``j``; the schedule is reshuffled after
        each pass, never repeating the last pair of a pass first.
    """

    def __init__(self, kind: str, n: int, b: Optional[int] = None,
                 rng: Optional[np.random.Generator] = None):
        if kind not in ("full", "uniform", "cyclic"):
            raise SamplerConfigError(f"unknown sampler kind {kind!r}")
        if kind == "full":
            b = n
        elif kind == "cyclic":
            if b not in (None, 1):
                raise SamplerConfigError("cyclic sampling uses b = 1")
            if n < 2:
                raise SamplerConfigError("cyclic sampling needs at least two players")
            b = 1
        if b is None or not 1 <= b <= n:
            raise SamplerConfigError(f"batch size b={b} must lie in [1, {n}]")
        self.kind = kind
        self.n = n
        self.b = b
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._full = PlayerMask.full(n)
        self._singles = [PlayerMask((i,), n) for i in range(n)] if b == 1 else None
        self.pairs = None
        self.cursor = 0
        self._buf = np.empty((0, 2, b), dtype=np.int64)
        self._pos = 0
        if kind == "cyclic":
            self.pairs = np.array([(i, j) for i in range(n) for j in range(n) if i != j])
            self.schedule = self._shuffled(None)

    @classmethod
    def from_spec(cls, spec: str, n: int, rng=None, b: Optional[int] = None) -> "Sampler":
        kind, parsed_b = parse_sampler(spec, n)
        return cls(kind, n, b if b is not None and kind == "uniform" else parsed_b, rng)

    def _shuffled(self, last) -> np.ndarray:
        order = self.pairs[self.rng.permutation(len(self.pairs))]
        if last is not None and len(order) > 1 and tuple(order[0]) == tuple(last):
            order[[0, -1]] = order[[-1, 0]]
        return order

    @property
    def is_full(self) -> bool:
        return self.kind == "full" or (self.kind == "uniform" and self.b == self.n)

    def _draw_uniform(self, count: int) -> np.ndarray:
        if self.b == 1:
            u = self.rng.random((count, 2))
            return np.minimum((u * self.n).astype(np.int64), self.n - 1)[:, :, None]
        u = self.rng.random((count, 2, self.n))
        return np.sort(np.argsort(u, axis=2)[:, :, :self.b], axis=2)

    def _next_pair(self):
        i, j = self.schedule[self.cursor]
        self.cursor += 1
        if self.cursor == len(self.schedule):
            self.schedule = self._shuffled(self.schedule[-1])
            self.cursor = 0
        return int(i), int(j)

    def take(self, count: int) -> np.ndarray:
        """Player ids for the next ``count`` iterations, shape (count, 2, b)."""
        if self.is_full:
            raise SamplerConfigError("full sampling has no player draws")
        if self.kind == "cyclic":
            return np.array([self._next_pair() for _ in range(count)], dtype=np.int64)[:, :, None]
        parts = []
        while count:
            if self._pos == len(self._buf):
                self._buf = self._draw_uniform(CHUNK)
                self._pos = 0
            c = min(count, len(self._buf) - self._pos)
            parts.append(self._buf[self._pos:self._pos + c])
            self._pos += c
            count -= c
        return parts[0] if len(parts) == 1 else np.concatenate(parts)

    def _mask(self, players) -> PlayerMask:
        if self.b == 1:
            return self._singles[int(players[0])]
        return PlayerMask(tuple(int(p) for p in players), self.n)

    def next_masks(self):
        if self.is_full:
            return self._full, self._full
        if self.kind == "cyclic":
            i, j = self._next_pair()
            return self._singles[i], self._singles[j]
        e, u = self.take(1)[0]
        return self._mask(e), self._mask(u)


def _rows(game: QuadraticGame, mask: PlayerMask):
    if mask.is_full:
        return slice(None)
    if mask.b == 1:
        return game.layout.slice(mask.selected[0])
    return game.layout.indices(mask.selected)


def _noisy_rows(game: QuadraticGame, rows, theta: np.ndarray, rng) -> np.ndarray:
    g = game.rows_gradient(rows, theta)
    if game.noise_std:
        g += game.noise_std * rng.standard_normal(g.shape[0])
    return g


def masked_estimate(game: QuadraticGame, theta: np.ndarray, mask: PlayerMask,
                    rng: np.random.Generator) -> GradientEstimate:
    """Player-sampled estimate: ``(n/b) g_i`` on selected blocks, zero elsewhere."""
    rows = _rows(game, mask)
    g = _noisy_rows(game, rows, theta, rng)
    if mask.is_full:
        return GradientEstimate(g, mask)
    out = np.zeros(game.d)
    out[rows] = mask.scale * g
    return GradientEstimate(out, mask)


class VrTable:
    """Last noisy gradient seen for every player, stacked like a strategy."""

    def __init__(self, values: Optional[np.ndarray] = None):
        self.values = None if values is None else np.array(values, dtype=np.float64)

    @classmethod
    def initialized(cls, game: QuadraticGame, theta: np.ndarray, rng) -> "VrTable":
        return cls(masked_estimate(game, theta, PlayerMask.full(game.n), rng).values)

    @property
    def ready(self) -> bool:
        return self.values is not None

    def copy(self) -> "VrTable":
        return VrTable(self.values)


def vr_estimate(game: QuadraticGame, theta: np.ndarray, mask: PlayerMask, table: VrTable,
                rng: np.random.Generator):
    """Variance-reduced estimate and the refreshed table.

    Selected blocks get ``(n/b) g_i + (1 - n/b) R_i`` and ``R_i <- g_i``;
    other blocks return ``R_i`` unchanged. The input table is not modified.
    """
    if not table.ready:
        raise VrStateError("variance-reduction table used before initialization")
    rows = _rows(game, mask)
    g = _noisy_rows(game, rows, theta, rng)
    R = table.values.copy()
    if mask.is_full:
        out = g.copy()
    else:
        out = R.copy()
        out[rows] = mask.scale * g + (1.0 - mask.scale) * R[rows]
    R[rows] = g
    return GradientEstimate(out, mask), VrTable(R)
