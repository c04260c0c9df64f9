"""Parabolic mean oscillation with optimal constants, and its supremum over rectangle families."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .geometry import SpatialDomain
from .parabolic import Box, ParabolicRectangle, cell_ranges
from .rng import make_rng


class EmptyBoxError(ValueError):
    """A box contains no lattice cell of the grid function."""


class RectangleRejected(ValueError):
    """The dilated rectangle is not contained in the space-time cylinder."""


class NoAdmissibleRectangle(ValueError):
    """No rectangle of the family is admissible for the requested dilation."""


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values on the space-time lattice over ``Omega x (0, T)``.

    ``values`` has shape ``domain.shape + (nt,)``; time cell ``k`` is
    ``[k tstep, (k+1) tstep)``. Complement cells hold nan.
    """

    domain: SpatialDomain
    values: np.ndarray
    tstep: float

    def __post_init__(self):
        if self.values.shape[:-1] != self.domain.shape:
            raise ValueError("values do not match the spatial grid")
        if not self.tstep > 0:
            raise ValueError("time step must be positive")
        vals = self.values[..., :1] if self.values.strides[-1] == 0 else self.values
        if not np.all(np.isfinite(vals[self.domain.mask])):
            raise ValueError("values must be finite on the interior")

    @property
    def nt(self) -> int:
        return self.values.shape[-1]

    @property
    def T(self) -> float:
        return self.nt * self.tstep

    @property
    def cell_volume(self) -> float:
        return self.domain.cell_volume * self.tstep

    def times(self) -> np.ndarray:
        return (np.arange(self.nt) + 0.5) * self.tstep

    @classmethod
    def from_function(cls, domain: SpatialDomain, T: float, nt: int, func: Callable) -> "GridFunction":
        """Sample ``func(*x, t)`` at cell centers (vectorized over broadcast arrays)."""
        tstep = T / nt
        axes = [domain.axis_centers(a) for a in range(domain.n)] + [(np.arange(nt) + 0.5) * tstep]
        grids = np.meshgrid(*axes, indexing="ij", sparse=True)
        vals = np.broadcast_to(func(*grids), (*domain.shape, nt)).astype(float)
        vals[~domain.mask] = np.nan
        return cls(domain, vals, tstep)

    @classmethod
    def time_independent(cls, domain: SpatialDomain, T: float, nt: int, spatial: np.ndarray) -> "GridFunction":
        """Broadcast a spatial field along time without copying it."""
        spatial = np.where(domain.mask, spatial, np.nan)
        vals = np.broadcast_to(spatial[..., None], (*domain.shape, nt))
        return cls(domain, vals, T / nt)

    def map(self, func: Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        if self.values.strides[-1] == 0:
            spatial = func(self.values[..., 0])
            return GridFunction.time_independent(self.domain, self.T, self.nt, spatial)
        return GridFunction(self.domain, func(self.values), self.tstep)

    def index_ranges(self, box: Box) -> list[tuple[int, int]] | None:
        ranges = cell_ranges(box.lo, box.hi, (*self.domain.origin, 0.0),
                             (self.domain.h,) * self.domain.n + (self.tstep,))
        shape = self.values.shape
        ranges = [(max(a, 0), min(b, s)) for (a, b), s in zip(ranges, shape)]
        if any(b <= a for a, b in ranges):
            return None
        return ranges

    @property
    def is_time_independent(self) -> bool:
        return self.values.strides[-1] == 0

    def cells_weighted(self, box: Box) -> tuple[np.ndarray, int]:
        """Distinct cell values in ``box`` and the multiplicity of each.

        A time-independent function returns its spatial values once, each
        standing for the number of time cells in the box.
        """
        ranges = self.index_ranges(box)
        if ranges is None:
            return np.empty(0), 0
        return self._block(ranges)

    def _block(self, ranges) -> tuple[np.ndarray, int]:
        sub = tuple(slice(a, b) for a, b in ranges[:-1])
        m = self.domain.mask[sub]
        a, b = ranges[-1]
        if self.is_time_independent:
            return self.values[sub + (0,)][m], b - a
        return self.values[sub + (slice(a, b),)][m].ravel(), 1

    def cells(self, box: Box) -> np.ndarray:
        """Values of the interior cells whose centers lie in ``box``."""
        vals, w = self.cells_weighted(box)
        return np.repeat(vals, w) if w != 1 else vals

    def grid_measure(self, box: Box) -> float:
        ranges = self.index_ranges(box)
        if ranges is None:
            return 0.0
        spatial = int(self.domain.mask[tuple(slice(a, b) for a, b in ranges[:-1])].sum())
        return spatial * (ranges[-1][1] - ranges[-1][0]) * self.cell_volume

    def time_slab_weighted(self, t0: float, t1: float) -> tuple[np.ndarray, int]:
        """Interior values in time cells with centers in ``[t0, t1)``, with multiplicity."""
        a = max(math.ceil(t0 / self.tstep - 0.5), 0)
        b = min(math.ceil(t1 / self.tstep - 0.5), self.nt)
        if b <= a:
            return np.empty(0), 0
        return self._block([(0, s) for s in self.domain.shape] + [(a, b)])

    def time_slab(self, t0: float, t1: float) -> np.ndarray:
        vals, w = self.time_slab_weighted(t0, t1)
        return np.repeat(vals, w) if w != 1 else vals


# ---------------------------------------------------------------------------
# optimal constants


@dataclass(frozen=True)
class OscillationResult:
    a: float
    value: float
    interval: tuple[float, float] | None = None
    rectangle: ParabolicRectangle | None = None

    @property
    def is_interval(self) -> bool:
        return self.interval is not None


def objective(upper: np.ndarray, lower: np.ndarray, a: float, b: float = 1.0) -> float:
    """``mean((upper - a)_+^b) + mean((a - lower)_+^b)``."""
    up = np.maximum(upper - a, 0.0)
    lo = np.maximum(a - lower, 0.0)
    if b != 1.0:
        up = up**b
        lo = lo**b
    return float(np.mean(up)) + float(np.mean(lo))


def _weighted_objective(uv, uw, lv, lw, cands, b):
    # mean over weighted unique values, for a batch of candidate constants
    out = np.empty(len(cands))
    nu, nl = uw.sum(), lw.sum()
    step = max(1, int(4_000_000 // max(len(uv), len(lv), 1)))
    for s in range(0, len(cands), step):
        c = cands[s:s + step, None]
        up = np.maximum(uv[None, :] - c, 0.0) ** b
        lo = np.maximum(c - lv[None, :], 0.0) ** b
        out[s:s + step] = (up @ uw) / nu + (lo @ lw) / nl
    return out


def best_constant(upper: np.ndarray, lower: np.ndarray, b: float = 1.0) -> OscillationResult:
    """Minimize ``a -> mean_upper((u-a)_+^b) + mean_lower((a-u)_+^b)`` exactly.

    For ``b = 1`` the objective is convex and piecewise linear; the sign change
    of its slope is located with integer counts. An interval of minimizers is
    reported and its midpoint returned. For ``b < 1`` the objective is concave
    between consecutive data values, so the minimum is attained at a data value
    and all of them are evaluated; ties go to the smallest.
    """
    upper = np.asarray(upper, dtype=float).ravel()
    lower = np.asarray(lower, dtype=float).ravel()
    if upper.size == 0 or lower.size == 0:
        raise EmptyBoxError("both sets must contain at least one cell")
    if not 0 < b <= 1:
        raise ValueError("exponent b must lie in (0, 1]")
    if b == 1.0:
        vals = np.unique(np.concatenate([upper, lower]))
        su, sl = np.sort(upper), np.sort(lower)
        nu, nl = upper.size, lower.size
        ge_u = nu - np.searchsorted(su, vals, side="left")  # upper >= v_k
        le_l = np.searchsorted(sl, vals, side="right")  # lower <= v_k
        m = vals.size
        # slope on (v_{k-1}, v_k), scaled by nu*nl: -nl #{upper > a} + nu #{lower < a}
        above = np.append(ge_u, 0).astype(np.int64)
        below = np.insert(le_l, 0, 0).astype(np.int64)
        slope = -nl * above + nu * below
        k = int(np.argmax(slope >= 0))
        if slope[k] == 0 and k < m:
            lo_v, hi_v = float(vals[k - 1]), float(vals[k])
            a = lo_v + (hi_v - lo_v) / 2
            interval = (lo_v, hi_v)
        else:
            a = float(vals[k - 1])
            interval = None
        return OscillationResult(a, objective(upper, lower, a, 1.0), interval)
    uv, uw = np.unique(upper, return_counts=True)
    lv, lw = np.unique(lower, return_counts=True)
    cands = np.unique(np.concatenate([uv, lv]))
    vals = _weighted_objective(uv, uw.astype(float), lv, lw.astype(float), cands, b)
    a = float(cands[int(np.argmin(vals))])
    return OscillationResult(a, objective(upper, lower, a, b), None)


# ---------------------------------------------------------------------------
# rectangles


def dilated_box(R: ParabolicRectangle, sigma: float) -> Box:
    return R.scaled(sigma).box() if sigma != 1.0 else R.box()


def admissible(domain: SpatialDomain, T: float, R: ParabolicRectangle, sigma: float = 1.0) -> bool:
    """Whether ``sigma R`` lies in ``Omega x (0, T)``."""
    box = dilated_box(R, sigma)
    lo, hi = box.lo, box.hi
    if lo[-1] < 0 or hi[-1] > T:
        return False
    return bool(domain.contains_box(lo[:-1], hi[:-1]))


def _halves(R: ParabolicRectangle, lag: str) -> tuple[Box, Box]:
    if lag == "S":
        return R.upper_quarter(), R.lower_quarter()
    if lag == "R":
        return R.upper_half(), R.lower_half()
    raise ValueError(f"lag selector must be 'R' or 'S', got {lag!r}")


def rectangle_oscillation(u: GridFunction, R: ParabolicRectangle, sigma: float | None = 1.0) -> OscillationResult:
    """Oscillation over ``S^+`` and ``S^-`` with the optimal constant (``b = 1``).

    Passing ``sigma=None`` skips the containment check.
    """
    return power_oscillation(u, R, 1.0, "S", sigma)


def power_oscillation(u: GridFunction, R: ParabolicRectangle, b: float, lag: str = "S",
                      sigma: float | None = 1.0) -> OscillationResult:
    """Power-``b`` oscillation over ``B^+`` and ``B^-`` for ``B`` in ``{R, S}``."""
    if sigma is not None and not admissible(u.domain, u.T, R, sigma):
        raise RectangleRejected(f"{sigma} R is not contained in the cylinder")
    up_box, lo_box = _halves(R, lag)
    # uniform multiplicities per side leave both means and the minimizer unchanged
    upper, lower = u.cells_weighted(up_box)[0], u.cells_weighted(lo_box)[0]
    res = best_constant(upper, lower, b)
    return OscillationResult(res.a, res.value, res.interval, R)


# ---------------------------------------------------------------------------
# rectangle families and the seminorm


@dataclass(frozen=True)
class FamilySpec:
    """Dyadic sidelength levels with dyadic centers, plus seeded random rectangles."""

    levels: int = 4
    max_per_axis: int = 8
    max_times: int = 8
    n_random: int = 32
    seed: int = 0

    def describe(self) -> str:
        return (f"dyadic(levels={self.levels},per_axis<={self.max_per_axis},"
                f"times<={self.max_times})+random(n={self.n_random},seed={self.seed})")


def rectangle_family(domain: SpatialDomain, T: float, p: float, spec: FamilySpec = FamilySpec(),
                     fragment: float = 1.0 / 8.0) -> list[ParabolicRectangle]:
    """Candidate rectangles independent of any dilation; admissibility is filtered later."""
    bounds = domain.bounds
    extent = max(b - a for a, b in bounds)
    L_max = min(extent, (T / 2) ** (1.0 / p))
    family = []
    for j in range(spec.levels):
        L = L_max * 2.0**-j
        m = min(2 ** (j + 1), spec.max_per_axis)
        mt = min(2 ** (j + 1), spec.max_times)
        axes = [a + (np.arange(m) + 0.5) * (b - a) / m for a, b in bounds]
        times = (np.arange(mt) + 0.5) * T / mt
        for c in np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, domain.n):
            for t in times:
                family.append(ParabolicRectangle(tuple(c), float(t), L, p, fragment=fragment))
    rng = make_rng(spec.seed, "family")
    for _ in range(spec.n_random):
        L = L_max * 2.0 ** -rng.uniform(0, spec.levels)
        c = [rng.uniform(a, b) for a, b in bounds]
        t = rng.uniform(0, T)
        family.append(ParabolicRectangle(tuple(c), float(t), float(L), p, fragment=fragment))
    return family


@dataclass(frozen=True)
class SeminormEstimate:
    sigma: float
    value: float
    argmax: ParabolicRectangle | None
    count: int  # admissible, evaluable rectangles
    family: str
    values: tuple[float, ...] = field(default=(), repr=False)


def _oscillations(u, family, sigma, b, lag):
    out = []
    for R in family:
        if not admissible(u.domain, u.T, R, sigma):
            continue
        up_box, lo_box = _halves(R, lag)
        upper, lower = u.cells_weighted(up_box)[0], u.cells_weighted(lo_box)[0]
        if upper.size == 0 or lower.size == 0:
            continue
        out.append((R, best_constant(upper, lower, b).value))
    return out


def seminorm_over(u: GridFunction, family: Sequence[ParabolicRectangle], sigma: float = 1.0,
                  b: float = 1.0, lag: str = "S", description: str = "explicit") -> SeminormEstimate:
    if sigma < 1:
        raise ValueError("sigma must be >= 1")
    osc = _oscillations(u, family, sigma, b, lag)
    if not osc:
        raise NoAdmissibleRectangle(f"no admissible rectangle for sigma={sigma}")
    vals = [v for _, v in osc]
    i = int(np.argmax(vals))
    return SeminormEstimate(sigma, float(vals[i]), osc[i][0], len(osc), description, tuple(vals))


def pbmo_seminorm(u: GridFunction, sigma: float = 1.0, p: float = 2.0, spec: FamilySpec = FamilySpec(),
                  family: Sequence[ParabolicRectangle] | None = None) -> SeminormEstimate:
    """Supremum of rectangle oscillations over the ``sigma``-admissible part of a family."""
    if family is None:
        family = rectangle_family(u.domain, u.T, p, spec)
        desc = spec.describe()
    else:
        desc = f"explicit({len(family)})"
    return seminorm_over(u, family, sigma, 1.0, "S", desc)


@dataclass(frozen=True)
class PowerOscillationParams:
    b: float = 1.0
    lag: str = "S"

    def __post_init__(self):
        if not 0 < self.b <= 1:
            raise ValueError("b must lie in (0, 1]")
        if self.lag not in ("R", "S"):
            raise ValueError("lag must be 'R' or 'S'")


def format_seminorm_rows(estimates: Iterable[SeminormEstimate]) -> list[list[str]]:
    rows = [["sigma", "value", "argmax_center", "argmax_L"]]
    for e in estimates:
        R = e.argmax
        center = ";".join(repr(v) for v in (*R.x, R.t)) if R is not None else ""
        rows.append([repr(e.sigma), repr(e.value), center, repr(R.L) if R is not None else ""])
    return rows
