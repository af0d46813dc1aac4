"""The base Lipschitz graph built from stacked triangle waves.

``g`` is a sum of ``M`` triangle waves at frequencies ``2^{jN}``, shifted so
that it vanishes at both ends of ``[-1, 1]``.  Values at grid points of
spacing ``2^{-MN}`` are held as integers over the common denominator
``M * 2^{MN}``, so slopes, families and endpoint conditions are exact.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np

from .geometry import Direction, Polyline

DEFAULT_BREAKPOINT_BUDGET = 1 << 24


class BudgetError(RuntimeError):
    """A construction would exceed its configured size budget."""


class ParameterWarning(UserWarning):
    """Parameters lie outside the asymptotic regime of the construction."""


@dataclass(frozen=True)
class GraphParams:
    M: int
    N: int
    alpha: float = math.pi / 4

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 3:
            raise ValueError(f"M must be an integer >= 3, got {self.M!r}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N!r}")
        if not 0.0 < self.alpha < math.pi / 2:
            raise ValueError(f"alpha must lie in (0, pi/2), got {self.alpha!r}")

    @property
    def asymptotic_regime(self) -> bool:
        m_req = 100 * math.ceil(1.0 / self.alpha)
        n_req = 100 * (1.0 + math.log2(1.0 / self.alpha))
        return self.M == m_req and self.N >= n_req


@dataclass(frozen=True, order=True)
class DyadicInterval:
    """Open interval ``(-1 + index 2^-level, -1 + (index+1) 2^-level)``."""

    level: int
    index: int

    def __post_init__(self):
        if self.level < 0 or not 0 <= self.index < (2 << self.level):
            raise ValueError(f"no dyadic interval {self.index} at level {self.level}")

    @classmethod
    def from_signed(cls, level: int, q: int) -> "DyadicInterval":
        """Interval ``(q 2^-level, (q+1) 2^-level)``."""
        return cls(level, q + (1 << level))

    @property
    def signed(self) -> int:
        return self.index - (1 << self.level)

    @property
    def left(self) -> Fraction:
        return Fraction(self.signed, 1 << self.level)

    @property
    def right(self) -> Fraction:
        return Fraction(self.signed + 1, 1 << self.level)

    @property
    def midpoint(self) -> Fraction:
        return Fraction(2 * self.signed + 1, 2 << self.level)

    @property
    def length(self) -> Fraction:
        return Fraction(1, 1 << self.level)

    def children(self, levels: int = 1):
        base = self.signed << levels
        return [DyadicInterval.from_signed(self.level + levels, base + i) for i in range(1 << levels)]

    def contains(self, t) -> bool:
        return self.left < t < self.right


def triangle_wave(t):
    """Period-4 tent ``|t mod 4 - 2| - 1``; works on scalars and arrays."""
    return np.abs(np.mod(t, 4.0) - 2.0) - 1.0


def f_component(j: int, t, p: GraphParams):
    """The j-th wave ``h(2^{jN} t) / (M 2^{jN})``."""
    if not 1 <= j <= p.M:
        raise ValueError(f"component index {j} outside 1..{p.M}")
    s = float(2 ** (j * p.N))
    out = triangle_wave(np.asarray(t, dtype=float) * s) / (p.M * s)
    return float(out) if np.ndim(out) == 0 else out


def _wave_numerators(i: np.ndarray, period_quarter: int) -> np.ndarray:
    # |(i mod 4D) - 2D| - D at integer grid points
    d = period_quarter
    return np.abs(np.mod(i, 4 * d) - 2 * d) - d


@dataclass(frozen=True, eq=False)
class GraphFamily:
    """The graph ``g``, its partial sums and the interval families."""

    params: GraphParams
    budget: int = field(default=DEFAULT_BREAKPOINT_BUDGET, repr=False)

    def __post_init__(self):
        cells = 2 ** (self.params.M * self.params.N + 1)
        if cells > self.budget:
            raise BudgetError(
                f"graph needs {cells} breakpoint cells, budget is {self.budget}"
            )
        if not self.params.asymptotic_regime:
            warnings.warn(
                f"M={self.params.M}, N={self.params.N} lies outside the asymptotic regime",
                ParameterWarning,
                stacklevel=3,
            )

    # grid -----------------------------------------------------------------
    @property
    def M(self) -> int:
        return self.params.M

    @property
    def N(self) -> int:
        return self.params.N

    @property
    def grid_level(self) -> int:
        return self.M * self.N

    @property
    def scale(self) -> int:
        """Grid points are ``i / scale``, ``-scale <= i <= scale``."""
        return 1 << self.grid_level

    @property
    def denominator(self) -> int:
        return self.M * self.scale

    @cached_property
    def grid(self) -> np.ndarray:
        return np.arange(-self.scale, self.scale + 1, dtype=np.int64)

    def partial_numerators(self, j: int, shifted: bool = False) -> np.ndarray:
        """Integer values of ``denominator * g_j`` on the grid."""
        if not 0 <= j <= self.M:
            raise ValueError(f"partial sum index {j} outside 0..{self.M}")
        total = np.zeros(len(self.grid), dtype=np.int64)
        shift = 0
        for i in range(1, j + 1):
            d = 1 << ((self.M - i) * self.N)
            total += _wave_numerators(self.grid, d)
            shift += int(_wave_numerators(np.array([self.scale]), d)[0])
        return total - shift if shifted else total

    @cached_property
    def numerators(self) -> np.ndarray:
        """Exact ``denominator * g`` at every grid point (shifted graph)."""
        v = self.partial_numerators(self.M, shifted=True)
        v.setflags(write=False)
        return v

    @cached_property
    def slope_numerators(self) -> np.ndarray:
        """``M * g'`` on each grid cell, an integer in ``[-M, M]``."""
        s = np.diff(self.numerators)
        s.setflags(write=False)
        return s

    @cached_property
    def g_breakpoints(self) -> np.ndarray:
        """``(t, g(t))`` at all grid points as floats."""
        t = self.grid.astype(float) / self.scale
        return np.column_stack([t, self.numerators.astype(float) / self.denominator])

    def g_exact(self, t: Fraction) -> Fraction:
        """``g`` at a rational point, exact."""
        t = Fraction(t)
        if not -1 <= t <= 1:
            raise ValueError("t outside [-1, 1]")
        x = t * self.scale
        i = min(math.floor(x), self.scale - 1)
        k = i + self.scale
        v0 = int(self.numerators[k])
        slope = int(self.numerators[k + 1]) - v0
        return (v0 + slope * (x - i)) / self.denominator

    # evaluation -------------------------------------------------------------
    def _interp(self, values: np.ndarray, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        x = (t + 1.0) * self.scale
        k = np.clip(np.floor(x).astype(np.int64), 0, 2 * self.scale - 1)
        v = values.astype(float)
        return (v[k] + (v[k + 1] - v[k]) * (x - k)) / self.denominator

    def g(self, t):
        out = self._interp(self.numerators, t)
        return float(out) if np.ndim(out) == 0 else out

    def g_partial(self, j: int, t):
        """Unshifted partial sum ``f_1 + ... + f_j``."""
        out = self._interp(self.partial_numerators(j), t)
        return float(out) if np.ndim(out) == 0 else out

    @property
    def sup_norm_bound(self) -> float:
        return 2.0 / self.M

    # families -------------------------------------------------------------
    def _positive_through(self, j: int, q: np.ndarray) -> np.ndarray:
        # Delta_{jN} interval q: every f_i, i <= j, has slope +1/M
        ok = np.ones(len(q), dtype=bool)
        for i in range(1, j + 1):
            ok &= np.mod(q >> ((j - i) * self.N), 4) >= 2
        return ok

    def family_signed(self, j: int) -> np.ndarray:
        """Signed indices of the intervals in ``G_j``, level ``jN``."""
        if not 1 <= j <= self.M:
            raise ValueError(f"family index {j} outside 1..{self.M}")
        half = 1 << (j * self.N - 1)
        q = np.arange(-half, half, dtype=np.int64)
        return q[self._positive_through(j, q)]

    def family(self, j: int) -> list:
        return [DyadicInterval.from_signed(j * self.N, int(q)) for q in self.family_signed(j)]

    @cached_property
    def slots_signed(self) -> np.ndarray:
        """Signed indices of ``I`` at level ``(M+1)N``, in increasing order."""
        base = self.family_signed(self.M) << self.N
        s = (base[:, None] + np.arange(1 << self.N)[None, :]).ravel()
        s.setflags(write=False)
        return s

    @property
    def slot_level(self) -> int:
        return (self.M + 1) * self.N

    @cached_property
    def slots(self) -> list:
        return [DyadicInterval.from_signed(self.slot_level, int(q)) for q in self.slots_signed]

    @property
    def n_slots(self) -> int:
        return len(self.slots_signed)

    @cached_property
    def slot_midpoints(self) -> np.ndarray:
        m = (2.0 * self.slots_signed + 1.0) / float(2 << self.slot_level)
        m.setflags(write=False)
        return m

    @cached_property
    def slot_centers(self) -> np.ndarray:
        """``(t, g(t))`` at slot midpoints, each coordinate rounded once."""
        q = self.slots_signed
        cell = q >> self.N
        k = cell + self.scale
        v0 = self.numerators[k]
        slope = self.numerators[k + 1] - v0
        offset = 2 * (q - (cell << self.N)) + 1
        # numerator and denominator are exact integers well below 2**53
        num = v0 * (1 << (self.N + 1)) + slope * offset
        out = np.column_stack([
            (2.0 * q + 1.0) / float(2 << self.slot_level),
            num.astype(float) / float(self.denominator << (self.N + 1)),
        ])
        out.setflags(write=False)
        return out

    def slot_of(self, t: float) -> int:
        """Position in ``slots`` of the slot containing ``t``, or -1."""
        q = math.floor(t * (1 << self.slot_level))
        pos = int(np.searchsorted(self.slots_signed, q))
        if pos < self.n_slots and self.slots_signed[pos] == q:
            return pos
        return -1

    # property checks --------------------------------------------------------
    def check_p1(self) -> bool:
        return int(self.numerators[0]) == 0 and int(self.numerators[-1]) == 0

    def check_p2(self) -> bool:
        if self.n_slots == 0:
            return False
        half = 1 << (self.slot_level - 1)
        inside = self.slots_signed[0] >= -half and self.slots_signed[-1] + 1 <= half
        cells = np.unique(self.slots_signed >> self.N) + self.scale
        return bool(inside) and bool(np.all(self.slope_numerators[cells] == self.M))

    def check_p3(self) -> bool:
        M, N = self.M, self.N
        if self.n_slots != 2 ** ((M + 1) * N - M):
            return False
        return all(len(self.family_signed(j)) == 2 ** (j * N - j) for j in range(1, M + 1))

    def is_one_lipschitz(self) -> bool:
        return bool(np.all(np.abs(self.slope_numerators) <= self.M))

    # geometry -----------------------------------------------------------------
    def tangent_direction(self, j: int, t: float) -> Direction:
        """Direction of the linear piece of ``g_j`` at a non-breakpoint ``t``."""
        if not 1 <= j <= self.M:
            raise ValueError(f"partial sum index {j} outside 1..{self.M}")
        level = j * self.N
        x = Fraction(t) * (1 << level)
        if x.denominator == 1 or not -1 < t < 1:
            raise ValueError(f"t={t} is a breakpoint of g_{j}, no tangent")
        q = math.floor(x)
        slope = 0
        for i in range(1, j + 1):
            slope += 1 if ((q >> ((j - i) * self.N)) % 4) >= 2 else -1
        return Direction(math.atan2(slope, self.M))

    def polyline(self) -> Polyline:
        return Polyline.from_vertices(self.g_breakpoints)

    @cached_property
    def arclength(self) -> float:
        d = self.slope_numerators.astype(float) / self.M
        return math.fsum(np.hypot(1.0, d) / self.scale)

    def export_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "g"])
            for t, v in self.g_breakpoints:
                w.writerow([repr(float(t)), repr(float(v))])


def build_graph(p: GraphParams, budget: int = DEFAULT_BREAKPOINT_BUDGET) -> GraphFamily:
    """Construct ``g`` and its interval families for ``p``."""
    return GraphFamily(p, budget)
