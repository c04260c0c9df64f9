"""Parabolic rectangles, their halves, quarters and fragments, and the parabolic quasi-metric.

Boxes are half-open (closed at the low face of every coordinate) so that unions
of lattice cells tile without double counting. Closed-form measures are
evaluated in extended precision and rounded once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

_LD = np.longdouble


def default_cp(p: float) -> float:
    """The constant making the upper quarter a metric ball: ``2**((2-p)/p)``."""
    return 2.0 ** ((2.0 - p) / p)


@dataclass(frozen=True)
class ParabolicPoint:
    x: tuple[float, ...]
    t: float

    def as_array(self) -> np.ndarray:
        return np.array([*self.x, self.t], dtype=float)


def parabolic_distance(a, b, p: float, cp: float | None = None) -> float:
    """``max(|x_a - x_b|_inf, C_p |t_a - t_b|**(1/p))``; points are ``(x..., t)``."""
    if not p > 1:
        raise ValueError("p must exceed 1")
    cp = default_cp(p) if cp is None else cp
    if not cp > 0:
        raise ValueError("C_p must be positive")
    a = a.as_array() if isinstance(a, ParabolicPoint) else np.asarray(a, dtype=float)
    b = b.as_array() if isinstance(b, ParabolicPoint) else np.asarray(b, dtype=float)
    space = float(np.max(np.abs(a[:-1] - b[:-1]))) if a.size > 1 else 0.0
    return max(space, cp * abs(float(a[-1] - b[-1])) ** (1.0 / p))


@dataclass(frozen=True)
class Box:
    """Half-open space-time box ``[center - half, center + half)``; time is the last axis."""

    center: tuple[float, ...]
    half: tuple[float, ...]

    @property
    def lo(self) -> np.ndarray:
        return np.subtract(self.center, self.half)

    @property
    def hi(self) -> np.ndarray:
        return np.add(self.center, self.half)

    @property
    def measure(self) -> float:
        return float(np.prod([2 * _LD(v) for v in self.half]))

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.all((pts >= self.lo) & (pts < self.hi), axis=1)

    def intersect(self, other: "Box") -> "Box | None":
        lo = np.maximum(self.lo, other.lo)
        hi = np.minimum(self.hi, other.hi)
        if np.any(hi <= lo):
            return None
        return Box(tuple((lo + hi) / 2), tuple((hi - lo) / 2))

    def inside(self, other: "Box") -> bool:
        return bool(np.all(self.lo >= other.lo) and np.all(self.hi <= other.hi))


def overlap_measure(a: Box, b: Box) -> float:
    ext = np.minimum(a.hi, b.hi) - np.maximum(a.lo, b.lo)
    return float(np.prod(np.maximum(ext, 0.0)))


def measure(box: Box, clip: Box | None = None) -> float:
    """Lebesgue measure of ``box``, optionally clipped to another box."""
    if clip is None:
        return box.measure
    return overlap_measure(box, clip)


def cell_ranges(lo, hi, origin, step) -> list[tuple[int, int]]:
    """Index ranges ``[a, b)`` of lattice cells whose centers lie in ``[lo, hi)``."""
    out = []
    for l, u, o, s in zip(lo, hi, origin, step):
        a = math.ceil((l - o) / s - 0.5)
        b = math.ceil((u - o) / s - 0.5)
        out.append((a, max(a, b)))
    return out


def grid_measure(box: Box, mask: np.ndarray, h: float, tstep: float, nt: int, origin=None) -> float:
    """Cell-counting measure of ``box`` against an interior mask times ``nt`` time cells."""
    n = mask.ndim
    origin = (0.0,) * n if origin is None else tuple(origin)
    ranges = cell_ranges(box.lo, box.hi, (*origin, 0.0), (h,) * n + (tstep,))
    shape = (*mask.shape, nt)
    ranges = [(max(a, 0), min(b, s)) for (a, b), s in zip(ranges, shape)]
    if any(b <= a for a, b in ranges):
        return 0.0
    spatial = int(mask[tuple(slice(a, b) for a, b in ranges[:-1])].sum())
    return spatial * (ranges[-1][1] - ranges[-1][0]) * h**n * tstep


@dataclass(frozen=True)
class ParabolicRectangle:
    """``Q(x, L) x (t - L**p, t + L**p)`` with ``L = scale * base_side``.

    Keeping the scale factor separate lets closed-form measures of scaled
    rectangles be evaluated without rounding the product first.
    """

    x: tuple[float, ...]
    t: float
    base_side: float
    p: float
    scale: float = 1.0
    fragment: float = 1.0 / 8.0

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in np.atleast_1d(self.x)))
        if not self.base_side > 0 or not self.scale > 0:
            raise ValueError("sidelength must be positive")
        if not self.p > 1:
            raise ValueError("p must exceed 1")

    @property
    def n(self) -> int:
        return len(self.x)

    @property
    def L(self) -> float:
        return float(_LD(self.scale) * _LD(self.base_side))

    @property
    def center(self) -> np.ndarray:
        return np.array([*self.x, self.t])

    def _side_ld(self, factor=1.0):
        return _LD(factor) * _LD(self.scale) * _LD(self.base_side)

    def _vol(self, factor: float, time_factor) -> float:
        # (factor L)^n * (factor L)^p * time_factor, rounded once
        s = self._side_ld(factor)
        return float(s ** self.n * s ** _LD(self.p) * _LD(time_factor))

    # closed-form measures
    @property
    def measure(self) -> float:
        return self._vol(1.0, 2)

    @property
    def half_measure(self) -> float:
        return self._vol(1.0, 1)

    @property
    def quarter_measure(self) -> float:
        return self._vol(1.0, 0.5)

    @property
    def fragment_measure(self) -> float:
        return self._vol(self.fragment, 0.5)

    # boxes
    def _box(self, space_half: float, tc: float, time_half: float) -> Box:
        return Box((*self.x, tc), (space_half,) * self.n + (time_half,))

    def box(self) -> Box:
        L = self.L
        return self._box(L / 2, self.t, L**self.p)

    def upper_half(self) -> Box:
        L = self.L
        return self._box(L / 2, self.t + L**self.p / 2, L**self.p / 2)

    def lower_half(self) -> Box:
        L = self.L
        return self._box(L / 2, self.t - L**self.p / 2, L**self.p / 2)

    def scaled_quarter(self, lam: float, sign: int = +1) -> Box:
        """``lam S^+`` (``sign=+1``) or ``lam S^-``: centered at ``t +- (3/4) L**p``."""
        L = self.L
        lL = float(_LD(lam) * _LD(L))
        return self._box(lL / 2, self.t + sign * 0.75 * L**self.p, 0.25 * lL**self.p)

    def upper_quarter(self) -> Box:
        return self.scaled_quarter(1.0, +1)

    def lower_quarter(self) -> Box:
        return self.scaled_quarter(1.0, -1)

    def upper_fragment(self) -> Box:
        return self.scaled_quarter(self.fragment, +1)

    def lower_fragment(self) -> Box:
        return self.scaled_quarter(self.fragment, -1)

    def sub_regions(self) -> dict[str, Box]:
        return {
            "R+": self.upper_half(), "R-": self.lower_half(),
            "S+": self.upper_quarter(), "S-": self.lower_quarter(),
            "U+": self.upper_fragment(), "U-": self.lower_fragment(),
        }

    def scaled(self, lam: float) -> "ParabolicRectangle":
        """Parabolic scaling about the center: ``lam R``."""
        if not lam > 0:
            raise ValueError("scaling factor must be positive")
        return replace(self, scale=float(_LD(self.scale) * _LD(lam)))

    def quarter_center(self, sign: int = +1) -> np.ndarray:
        return np.array([*self.x, self.t + sign * 0.75 * self.L**self.p])


def sub_regions(R: ParabolicRectangle) -> dict[str, Box]:
    return R.sub_regions()


def scale(R: ParabolicRectangle, lam: float) -> tuple[ParabolicRectangle, Box]:
    """``lam R`` together with the scaled upper quarter ``lam S^+``."""
    return R.scaled(lam), R.scaled_quarter(lam, +1)


def parse_rectangle(text: str, fragment: float = 1.0 / 8.0) -> ParabolicRectangle:
    """Parse ``"cx[,cy],t,L,p"``."""
    parts = [float(v) for v in text.split(",")]
    if len(parts) not in (4, 5):
        raise ValueError(f"rectangle literal needs 4 or 5 numbers, got {text!r}")
    *x, t, L, p = parts
    return ParabolicRectangle(tuple(x), t, L, p, fragment=fragment)


def format_rectangle(R: ParabolicRectangle) -> str:
    return ",".join(repr(v) for v in (*R.x, R.t, R.L, R.p))


def cylinder_box(bounds: Sequence[tuple[float, float]], T: float) -> Box:
    """Bounding box of ``Omega x (0, T)`` given spatial bounds."""
    lo = [b[0] for b in bounds] + [0.0]
    hi = [b[1] for b in bounds] + [T]
    return Box(tuple((np.add(lo, hi)) / 2), tuple((np.subtract(hi, lo)) / 2))
