"""Discretized spatial domains and their quasihyperbolic geometry.

A domain is a cell complex on a uniform lattice of spacing ``h``: the union of
closed interior cells. The complement is the union of the remaining cells plus
everything outside the bounding box. Point arguments snap to the nearest
interior cell center.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial import cKDTree


class DomainError(ValueError):
    """Invalid domain, or a point that does not belong to it."""


@dataclass(frozen=True, eq=False)
class SpatialDomain:
    """Cell-complex domain in one or two spatial dimensions.

    ``mask[ix]`` (1D) or ``mask[ix, iy]`` (2D) is True for interior cells.
    Cell ``i`` spans ``[origin + i*h, origin + (i+1)*h)`` along each axis.
    """

    mask: np.ndarray
    h: float
    origin: tuple[float, ...] = None  # type: ignore[assignment]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim not in (1, 2):
            raise DomainError(f"dimension must be 1 or 2, got {mask.ndim}")
        if not self.h > 0:
            raise DomainError("grid spacing must be positive")
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        origin = (0.0,) * mask.ndim if self.origin is None else tuple(float(o) for o in self.origin)
        if len(origin) != mask.ndim:
            raise DomainError("origin has wrong dimension")
        object.__setattr__(self, "origin", origin)
        if not mask.any():
            raise DomainError("empty interior")
        _, ncomp = ndimage.label(mask)
        if ncomp != 1:
            raise DomainError(f"interior must be connected, found {ncomp} components")

    @property
    def n(self) -> int:
        return self.mask.ndim

    @property
    def shape(self) -> tuple[int, ...]:
        return self.mask.shape

    @property
    def cell_volume(self) -> float:
        return self.h**self.n

    @property
    def measure(self) -> float:
        return int(self.mask.sum()) * self.cell_volume

    @property
    def bounds(self) -> tuple[tuple[float, float], ...]:
        return tuple((o, o + s * self.h) for o, s in zip(self.origin, self.shape))

    def axis_centers(self, axis: int) -> np.ndarray:
        return self.origin[axis] + (np.arange(self.shape[axis]) + 0.5) * self.h

    def centers(self) -> np.ndarray:
        """Cell centers, array of shape ``mask.shape + (n,)``."""
        axes = [self.axis_centers(a) for a in range(self.n)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def cell_center(self, idx: Sequence[int]) -> np.ndarray:
        return np.array([o + (i + 0.5) * self.h for o, i in zip(self.origin, idx)])

    def interior_indices(self) -> np.ndarray:
        """Indices of interior cells, shape ``(m, n)``, in C order."""
        return np.argwhere(self.mask)

    def snap(self, point) -> tuple[int, ...]:
        """Nearest interior cell to ``point``; error if none within ``h``."""
        x = np.atleast_1d(np.asarray(point, dtype=float))
        if x.shape != (self.n,):
            raise DomainError(f"point must have {self.n} coordinates")
        idx = np.floor((x - np.array(self.origin)) / self.h).astype(int)
        if np.all(idx >= 0) and np.all(idx < self.shape) and self.mask[tuple(idx)]:
            return tuple(int(i) for i in idx)
        # point lies in a complement cell or outside; look at nearby interior cells
        lo = np.maximum(idx - 2, 0)
        hi = np.minimum(idx + 3, self.shape)
        if np.any(lo >= hi):
            raise DomainError(f"point {x.tolist()} is not within h of the interior")
        sub = tuple(slice(a, b) for a, b in zip(lo, hi))
        cand = np.argwhere(self.mask[sub]) + lo
        if len(cand) == 0:
            raise DomainError(f"point {x.tolist()} is not within h of the interior")
        cc = np.array(self.origin) + (cand + 0.5) * self.h
        dist = np.linalg.norm(cc - x, axis=1)
        j = int(np.argmin(dist))
        if dist[j] > self.h:
            raise DomainError(f"point {x.tolist()} is not within h of the interior")
        return tuple(int(i) for i in cand[j])

    def contains_box(self, lo, hi) -> bool:
        """Whether the open box ``(lo, hi)`` lies in the closed interior cells."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        o = np.array(self.origin)
        a = np.floor((lo - o) / self.h).astype(int)
        b = np.ceil((hi - o) / self.h).astype(int)
        if np.any(a < 0) or np.any(b > np.array(self.shape)) or np.any(b <= a):
            return False
        return bool(self.mask[tuple(slice(i, j) for i, j in zip(a, b))].all())

    def refine(self, k: int) -> "SpatialDomain":
        """Subdivide every cell into ``k**n`` cells; the point set is unchanged."""
        if k < 1:
            raise DomainError("refinement factor must be >= 1")
        m = self.mask
        for axis in range(self.n):
            m = np.repeat(m, k, axis=axis)
        return SpatialDomain(m, self.h / k, self.origin)

    def complement_tree(self) -> tuple[cKDTree, np.ndarray]:
        """KD-tree over complement cell centers, including a one-cell outer ring."""
        if "ctree" not in self._cache:
            padded = np.pad(self.mask, 1, constant_values=False)
            idx = np.argwhere(~padded) - 1
            pts = np.array(self.origin) + (idx + 0.5) * self.h
            self._cache["ctree"] = (cKDTree(pts), pts)
        return self._cache["ctree"]

    def point_distance(self, point) -> float:
        """Exact Euclidean distance from an arbitrary point to the complement."""
        tree, pts = self.complement_tree()
        x = np.atleast_1d(np.asarray(point, dtype=float))
        d0, _ = tree.query(x)
        half = 0.5 * self.h
        cand = tree.query_ball_point(x, d0 + half * math.sqrt(self.n) + 1e-12 * self.h)
        gap = np.maximum(np.abs(pts[cand] - x) - half, 0.0)
        return float(np.sqrt((gap * gap).sum(axis=1)).min())


# ---------------------------------------------------------------------------
# constructors


def _shape_domain(inside, bounds, h) -> SpatialDomain:
    bounds = [tuple(map(float, b)) for b in bounds]
    counts = [int(round((b1 - b0) / h)) for b0, b1 in bounds]
    axes = [b0 + (np.arange(c) + 0.5) * h for (b0, _), c in zip(bounds, counts)]
    grids = np.meshgrid(*axes, indexing="ij")
    return SpatialDomain(inside(*grids), h, tuple(b0 for b0, _ in bounds))


def box_domain(bounds, h: float) -> SpatialDomain:
    """Axis-aligned box; ``bounds`` is a list of ``(lo, hi)`` pairs."""
    return _shape_domain(lambda *g: np.ones_like(g[0], dtype=bool), bounds, h)


def disk_domain(radius: float, h: float, center=(0.0, 0.0)) -> SpatialDomain:
    cx, cy = center
    bounds = [(cx - radius, cx + radius), (cy - radius, cy + radius)]
    return _shape_domain(lambda x, y: (x - cx) ** 2 + (y - cy) ** 2 < radius**2, bounds, h)


def l_domain(h: float, size: float = 1.0) -> SpatialDomain:
    """``[0, size]^2`` minus its upper-right quarter."""
    half = size / 2
    return _shape_domain(lambda x, y: (x < half) | (y < half), [(0, size), (0, size)], h)


# ---------------------------------------------------------------------------
# distance to the complement


@dataclass(frozen=True, eq=False)
class DistanceField:
    domain: SpatialDomain
    values: np.ndarray  # d per cell, 0 on complement cells

    def at(self, idx) -> float:
        return float(self.values[tuple(idx)])


def distance_to_boundary(domain: SpatialDomain) -> DistanceField:
    """Distance from each interior cell center to the union of complement cells.

    Nearest points of a closed complement cell to a cell center lie on the
    half-cell lattice, so an exact Euclidean distance transform on the doubled
    lattice gives the exact value ``(h/2) * sqrt(S)`` with integer ``S``.
    """
    padded = np.pad(domain.mask, 1, constant_values=False)
    n = domain.n
    shape2 = tuple(2 * s + 1 for s in padded.shape)
    comp = np.zeros(shape2, dtype=bool)
    comp[tuple(slice(1, None, 2) for _ in range(n))] = ~padded
    comp = ndimage.binary_dilation(comp, structure=np.ones((3,) * n, dtype=bool))
    idx = ndimage.distance_transform_edt(~comp, return_distances=False, return_indices=True)
    grid = np.indices(shape2)
    sq = ((idx - grid).astype(np.int64) ** 2).sum(axis=0)
    centers = sq[tuple(slice(3, -3, 2) for _ in range(n))]
    values = np.where(domain.mask, 0.5 * domain.h * np.sqrt(centers), 0.0)
    return DistanceField(domain, values)


def brute_force_distance(domain: SpatialDomain) -> np.ndarray:
    """Nearest-complement-cell search by exhaustion (reference implementation)."""
    padded = np.pad(domain.mask, 1, constant_values=False)
    comp = np.argwhere(~padded) - 1
    out = np.zeros(domain.shape)
    for idx in domain.interior_indices():
        gap = np.maximum(2 * np.abs(comp - idx) - 1, 0)
        s = int((gap * gap).sum(axis=1).min())
        out[tuple(idx)] = 0.5 * domain.h * math.sqrt(s)
    return out


# ---------------------------------------------------------------------------
# quasihyperbolic metric


@dataclass(frozen=True, eq=False)
class _Graph:
    node_of: np.ndarray  # grid-shaped, -1 on complement
    cells: np.ndarray  # (m, n) indices of interior cells
    matrix: csr_matrix


def _neighbor_offsets(n: int):
    if n == 1:
        return [(1,)]
    return [(1, 0), (0, 1), (1, 1), (1, -1)]


def _build_graph(domain: SpatialDomain, dist: DistanceField) -> _Graph:
    cache = domain._cache
    if "graph" in cache:
        return cache["graph"]
    mask = domain.mask
    cells = np.argwhere(mask)
    node_of = -np.ones(domain.shape, dtype=np.int64)
    node_of[tuple(cells.T)] = np.arange(len(cells))
    inv = np.zeros(domain.shape)
    inv[mask] = 1.0 / dist.values[mask]
    padded = np.pad(mask, 1, constant_values=False)
    rows, cols, wts = [], [], []
    for off in _neighbor_offsets(domain.n):
        off = np.array(off)
        nb = cells + off
        ok = np.all(nb >= 0, axis=1) & np.all(nb < domain.shape, axis=1)
        a, b = cells[ok], nb[ok]
        ok = mask[tuple(b.T)]
        if np.count_nonzero(off) == 2:
            # diagonal edges only when both side cells are interior
            s1 = a + np.array([off[0], 0]) + 1
            s2 = a + np.array([0, off[1]]) + 1
            ok &= padded[tuple(s1.T)] & padded[tuple(s2.T)]
        a, b = a[ok], b[ok]
        length = domain.h * math.sqrt(float(np.count_nonzero(off)))
        w = length * ((inv[tuple(a.T)] + inv[tuple(b.T)]) / 2)
        ia, ib = node_of[tuple(a.T)], node_of[tuple(b.T)]
        rows += [ia, ib]
        cols += [ib, ia]
        wts += [w, w]
    m = len(cells)
    matrix = csr_matrix((np.concatenate(wts), (np.concatenate(rows), np.concatenate(cols))), shape=(m, m))
    graph = _Graph(node_of, cells, matrix)
    cache["graph"] = graph
    return graph


def edge_weight(domain: SpatialDomain, dist: DistanceField, a, b) -> float:
    """Weight of the graph edge between neighboring cells ``a`` and ``b``."""
    off = np.abs(np.subtract(b, a))
    length = domain.h * math.sqrt(float(np.count_nonzero(off)))
    return length * ((1.0 / dist.values[tuple(a)] + 1.0 / dist.values[tuple(b)]) / 2)


@dataclass(frozen=True, eq=False)
class QHResult:
    """Single-source quasihyperbolic distances ``k(x0, .)`` on the cell graph."""

    domain: SpatialDomain
    dist: DistanceField
    source: tuple[int, ...]
    k: np.ndarray  # grid-shaped, nan on complement
    pred: np.ndarray  # grid-shaped flat predecessor cell index, -1 at source/complement

    @property
    def source_point(self) -> np.ndarray:
        return self.domain.cell_center(self.source)


def quasihyperbolic_distances(domain: SpatialDomain, x0, dist: DistanceField | None = None) -> QHResult:
    dist = dist if dist is not None else distance_to_boundary(domain)
    src = domain.snap(x0)
    graph = _build_graph(domain, dist)
    s = int(graph.node_of[src])
    kd, pr = dijkstra(graph.matrix, directed=True, indices=s, return_predecessors=True)
    if not np.all(np.isfinite(kd)):
        raise DomainError("graph is disconnected")
    k = np.full(domain.shape, np.nan)
    k[tuple(graph.cells.T)] = kd
    flat_cells = np.ravel_multi_index(tuple(graph.cells.T), domain.shape)
    pred = -np.ones(domain.shape, dtype=np.int64)
    has = pr >= 0
    pred[tuple(graph.cells[has].T)] = flat_cells[pr[has]]
    return QHResult(domain, dist, src, k, pred)


def geodesic_cells(result: QHResult, y) -> np.ndarray:
    """Cell indices of the discrete geodesic from ``y`` to the source."""
    idx = result.domain.snap(y)
    path = [idx]
    flat = int(np.ravel_multi_index(idx, result.domain.shape))
    src_flat = int(np.ravel_multi_index(result.source, result.domain.shape))
    limit = result.domain.mask.size
    while flat != src_flat:
        nxt = int(result.pred.flat[flat])
        if nxt < 0 or len(path) > limit:
            raise DomainError("cell is unreachable from the source")
        flat = nxt
        path.append(tuple(int(i) for i in np.unravel_index(flat, result.domain.shape)))
    return np.array(path)


def geodesic(result: QHResult, y) -> np.ndarray:
    """Polyline (cell centers) from ``y`` to the source, shape ``(m, n)``."""
    cells = geodesic_cells(result, y)
    return np.array(result.domain.origin) + (cells + 0.5) * result.domain.h


def polyline_weighted_length(result: QHResult, cells: np.ndarray) -> float:
    """Sum of edge weights along ``cells``, accumulated from the source end."""
    total = 0.0
    rev = cells[::-1]
    for a, b in zip(rev[:-1], rev[1:]):
        total = total + edge_weight(result.domain, result.dist, a, b)
    return total


def arclengths(result: QHResult) -> np.ndarray:
    """Euclidean arclength of every cell's extracted geodesic (nan on complement)."""
    shape = result.domain.shape
    size = result.domain.mask.size
    ids = np.arange(size)
    pred = result.pred.ravel().copy()
    coords = np.stack(np.unravel_index(ids, shape), axis=-1)
    acc = np.zeros(size)
    has = pred >= 0
    acc[has] = np.linalg.norm(coords[has] - coords[pred[has]], axis=1) * result.domain.h
    pred[~has] = ids[~has]
    # pointer doubling: acc[v] sums the steps over the first 2**r ancestors
    while True:
        nxt = pred[pred]
        acc = acc + np.where(pred != ids, acc[pred], 0.0)
        if np.array_equal(nxt, pred):
            break
        pred = nxt
    out = acc.reshape(shape)
    return np.where(result.domain.mask, out, np.nan)


def max_geodesic_length(result: QHResult) -> float:
    """Largest Euclidean arclength over all extracted geodesics to the source."""
    return float(np.nanmax(arclengths(result)))


# ---------------------------------------------------------------------------
# quasihyperbolic boundary condition


@dataclass(frozen=True)
class QHBCFit:
    z: np.ndarray
    K: float
    q: float
    nu: float
    residual: float  # max over cells of k - K log(K / d); <= 0 when K is valid
    ok: bool


K_GRID = 2.0 ** (np.arange(0, 81) / 4.0)


def fit_qhbc(domain: SpatialDomain, z, result: QHResult | None = None) -> QHBCFit:
    """Smallest ``K`` on the ``2**(j/4)`` grid with ``k(z, y) <= K log(K/d(y))``.

    Also reports the maximal geodesic length ``q`` and the decay exponent of
    the boundary shells ``|{d < 2**-j}|`` fitted by least squares.
    """
    result = result if result is not None else quasihyperbolic_distances(domain, z)
    mask = domain.mask
    k = result.k[mask]
    d = result.dist.values[mask]
    K_found, res_found = math.nan, math.nan
    for K in K_GRID:
        res = float(np.max(k - K * np.log(K / d)))
        if res <= 0:
            K_found, res_found = float(K), res
            break
    q = max_geodesic_length(result)
    nu = shell_decay_exponent(domain, result.dist)
    return QHBCFit(result.source_point, K_found, q, nu, res_found, not math.isnan(K_found))


def shell_measures(domain: SpatialDomain, dist: DistanceField) -> tuple[np.ndarray, np.ndarray]:
    """Dyadic levels ``j`` and measures of ``{d < 2**-j}`` that are nonempty proper subsets."""
    d = dist.values[domain.mask]
    j0 = math.floor(-math.log2(d.max()))
    levels, measures = [], []
    for j in range(j0, j0 + 64):
        count = int(np.count_nonzero(d < 2.0**-j))
        if count == 0:
            break
        if count < d.size:
            levels.append(j)
            measures.append(count * domain.cell_volume)
    return np.array(levels), np.array(measures)


def shell_decay_exponent(domain: SpatialDomain, dist: DistanceField) -> float:
    levels, measures = shell_measures(domain, dist)
    if len(levels) < 2:
        return math.nan
    slope, _ = np.polyfit(levels, np.log2(measures), 1)
    return float(-slope)


# ---------------------------------------------------------------------------
# Whitney-type cover


@dataclass(frozen=True, eq=False)
class SpatialCover:
    centers: np.ndarray  # (m, n)
    sides: np.ndarray  # sidelengths of the expanded cubes 5Q_y
    max_overlap: int
    mean_overlap: float

    @property
    def seed_sides(self) -> np.ndarray:
        return self.sides / 5


def whitney_cover(domain: SpatialDomain, beta: float, cap: float, z=None,
                  dist: DistanceField | None = None) -> SpatialCover:
    """Greedy 5r-covering by cubes ``Q(y, l_y)`` with ``5 l_y = min(beta d(y), cap)``.

    Seeds are taken in order of decreasing size (``z`` first when given); a seed
    is kept when its cube is disjoint from all kept cubes.
    """
    if not 0 < beta < 1:
        raise ValueError("beta must lie in (0, 1)")
    if not cap > 0:
        raise ValueError("cap must be positive")
    dist = dist if dist is not None else distance_to_boundary(domain)
    cells = domain.interior_indices()
    pts = np.array(domain.origin) + (cells + 0.5) * domain.h
    side = np.minimum(beta * dist.values[tuple(cells.T)], cap) / 5
    order = np.argsort(-side, kind="stable")
    if z is not None:
        zi = domain.snap(z)
        first = int(np.flatnonzero(np.all(cells == zi, axis=1))[0])
        order = np.concatenate([[first], order[order != first]])
    kept_c = np.empty((len(pts), domain.n))
    kept_s = np.empty(len(pts))
    m = 0
    # bucket kept cubes on a coarse grid to keep the disjointness test local
    cell_size = max(float(side.max()), domain.h)
    buckets: dict[tuple[int, ...], list[int]] = {}
    for i in order:
        c, s = pts[i], side[i]
        key = tuple(int(v) for v in np.floor(c / cell_size))
        clash = False
        for off in np.ndindex(*(3,) * domain.n):
            for j in buckets.get(tuple(k + o - 1 for k, o in zip(key, off)), ()):
                if np.max(np.abs(kept_c[j] - c)) < (kept_s[j] + s) / 2:
                    clash = True
                    break
            if clash:
                break
        if not clash:
            kept_c[m], kept_s[m] = c, s
            buckets.setdefault(key, []).append(m)
            m += 1
    centers, seeds = kept_c[:m], kept_s[:m]
    counts = cover_counts(pts, centers, 5 * seeds)
    return SpatialCover(centers, 5 * seeds, int(counts.max()), float(counts.mean()))


def cover_counts(points: np.ndarray, centers: np.ndarray, sides: np.ndarray) -> np.ndarray:
    """Number of open cubes containing each point."""
    counts = np.zeros(len(points), dtype=np.int64)
    for start in range(0, len(centers), 256):
        c = centers[start:start + 256]
        s = sides[start:start + 256]
        inside = np.max(np.abs(points[:, None, :] - c[None, :, :]), axis=2) < s[None, :] / 2
        counts += inside.sum(axis=1)
    return counts
