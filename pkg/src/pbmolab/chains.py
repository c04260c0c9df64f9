"""Chains of parabolic rectangles marching back in time along quasihyperbolic geodesics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .geometry import QHResult, SpatialDomain, geodesic, max_geodesic_length
from .oscillation import admissible
from .parabolic import ParabolicPoint, ParabolicRectangle, overlap_measure


class ChainError(ValueError):
    """A chain cannot be built with the given start point and parameters."""


@dataclass(frozen=True)
class ChainParams:
    """Parameters of the chain construction.

    ``alpha`` is tied to ``eta`` through ``alpha**(p-1) <= eta / (2 N)``; use
    :meth:`from_eta` to pick the largest admissible ``alpha``.
    """

    beta: float = 0.5
    alpha: float = 0.025
    alpha_prime: float = 1.0
    delta: float = 2.0
    eta: float = 1.0
    N: float = 20.0
    p: float = 2.0
    T: float = 8.0
    fragment: float = 1.0 / 8.0
    C_iv: float = 64.0
    max_links: int = 200_000

    def __post_init__(self):
        if not 0 < self.beta < 1:
            raise ValueError("beta must lie in (0, 1)")
        for name in ("alpha", "alpha_prime", "delta", "eta", "N", "T"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.p > 1:
            raise ValueError("p must exceed 1")

    @staticmethod
    def default_eta(sigma: float, delta: float) -> float:
        """The proof's choice ``(10 sigma)**-10 * delta``; far too small for grids."""
        return (10.0 * sigma) ** -10 * delta

    @classmethod
    def from_eta(cls, eta: float, N: float, p: float, **kw) -> "ChainParams":
        alpha = (eta / (2.0 * N)) ** (1.0 / (p - 1.0))
        return cls(alpha=alpha, eta=eta, N=N, p=p, **kw)

    @property
    def alpha_ok(self) -> bool:
        return self.alpha ** (self.p - 1) <= self.eta / (2 * self.N) * (1 + 1e-12)

    @property
    def growth(self) -> float:
        """Upper comparability factor ``l_{i+1} / l_i`` outside the doubling phase."""
        b, p = self.beta, self.p
        return max(1.0 + b, (1.0 + 1.5 * b**p) ** (1.0 / p))

    def overlap_floor(self, n: int) -> float:
        """Derived lower bound for the fragment overlap ratio of consecutive links."""
        m = min(1.0 - self.beta, 1.0 / max(self.growth, 2.0))
        f = self.fragment
        return m ** (n + self.p) * (f / 2) ** n * f**self.p / 4


@dataclass(frozen=True)
class Chain:
    """Rectangles ``R_1, ..., R_k``; row ``j`` of ``y``, ``t``, ``l`` is ``R_{j+1}``."""

    y: np.ndarray  # (k, n) spatial centers
    t: np.ndarray  # (k,) temporal centers
    l: np.ndarray  # (k,) sidelengths
    p: float
    doubling: np.ndarray  # (k,) True where the sidelength came from the doubling phase
    fragment: float = 1.0 / 8.0

    @property
    def k(self) -> int:
        return len(self.t)

    @property
    def tau(self) -> float:
        return float(self.t[-1])

    @property
    def n(self) -> int:
        return self.y.shape[1]

    def rectangles(self) -> list[ParabolicRectangle]:
        return [ParabolicRectangle(tuple(y), float(t), float(l), self.p, fragment=self.fragment)
                for y, t, l in zip(self.y, self.t, self.l)]


@dataclass(frozen=True)
class ChainCertificate:
    inclusion_ok: bool  # (i)
    terminal_ok: bool  # (i), last rectangle at z with the rule sidelength (factor 2)
    overlaps: np.ndarray = field(repr=False)  # (ii) per link
    min_overlap: float = 0.0
    overlap_floor: float = 0.0
    displacement: float = 0.0  # (iii) t - tau
    displacement_bound: float = 0.0
    k: int = 0
    bound_expression: float = 0.0  # (iv) right-hand side without C
    ratio: float = 0.0  # k / bound_expression
    C_iv: float = 0.0
    comparable: bool = True  # per-link sidelength comparability

    @property
    def i_ok(self) -> bool:
        return self.inclusion_ok and self.terminal_ok

    @property
    def ii_ok(self) -> bool:
        return self.k == 1 or self.min_overlap >= self.overlap_floor

    @property
    def iii_ok(self) -> bool:
        return 0.0 <= self.displacement <= self.displacement_bound

    @property
    def iv_ok(self) -> bool:
        return self.ratio <= self.C_iv

    @property
    def valid(self) -> bool:
        return self.i_ok and self.ii_ok and self.iii_ok and self.iv_ok


# ---------------------------------------------------------------------------


def sidelength_rule(x, t: float, params: ChainParams, q: float, domain: SpatialDomain | None = None,
                    d: float | None = None, capped: bool = False) -> float:
    """``min(beta d(x), beta (T - t)**(1/p), alpha q)``, optionally capped by ``alpha' q``."""
    if not t < params.T:
        raise ChainError("time must lie below T")
    if d is None:
        if domain is None:
            raise ValueError("need a domain or a distance value")
        d = domain.point_distance(x)
    if not d > 0:
        raise ChainError("point lies outside the domain")
    l = min(params.beta * d, params.beta * (params.T - t) ** (1.0 / params.p), params.alpha * q)
    return min(l, params.alpha_prime * q) if capped else l


class _Walker:
    """Forward walk along a polyline, locating exits from sup-norm cubes."""

    def __init__(self, poly: np.ndarray):
        self.poly = poly
        self.seg = 0  # current segment index
        self.pos = poly[0].copy()

    def exit(self, center: np.ndarray, r: float) -> np.ndarray:
        """First point after the current position at sup-distance ``r`` from ``center``."""
        poly = self.poly
        a = self.pos
        while self.seg < len(poly) - 1:
            b = poly[self.seg + 1]
            if np.max(np.abs(b - center)) >= r:
                d = b - a
                off = a - center
                lam = 1.0
                for i in range(len(d)):
                    if d[i] != 0:
                        li = (math.copysign(r, d[i]) - off[i]) / d[i]
                        if 0 <= li < lam:
                            lam = li
                self.pos = a + lam * d
                return self.pos.copy()
            self.seg += 1
            a = b
        self.pos = poly[-1].copy()
        return self.pos.copy()


def _polyline(qh: QHResult, x: np.ndarray) -> np.ndarray:
    path = geodesic(qh, x)
    if np.array_equal(path[0], x):
        return path
    return np.vstack([x[None, :], path])


def build_chain(start: ParabolicPoint, qh: QHResult, params: ChainParams, q: float | None = None) -> Chain:
    """March from ``start`` along the geodesic to ``z`` (the root of ``qh``).

    Each new spatial center is where the geodesic leaves the fragment cube of
    the current rectangle, so that consecutive fragments overlap.
    """
    domain = qh.domain
    q = max_geodesic_length(qh) if q is None else q
    x = np.atleast_1d(np.asarray(start.x, dtype=float))
    t0 = float(start.t)
    p, T = params.p, params.T
    if params.delta * q**p >= T:
        raise ChainError("delta q^p >= T: the cylinder has no admissible start times")
    if not params.delta * q**p < t0 < T:
        raise ChainError(f"start time must lie in (delta q^p, T) = ({params.delta * q**p}, {T})")
    domain.snap(x)
    z = qh.source_point
    poly = _polyline(qh, x)
    walker = _Walker(poly)

    def rule(y, t):
        return sidelength_rule(y, t, params, q, domain)

    l0 = rule(x, t0)
    l = min(l0, params.alpha_prime * q)
    doubling = l0 > params.alpha_prime * q
    ys, ts, ls, dbl = [x.copy()], [t0], [l], [False]
    y, t = x.copy(), t0
    half = params.fragment / 2
    while True:
        at_z = np.array_equal(y, z)
        if at_z and not doubling:
            break
        if len(ts) >= params.max_links:
            raise ChainError("chain exceeded the maximal number of links")
        r = half * l
        if at_z or np.max(np.abs(z - y)) <= r:
            y_next = z.copy()
            walker.pos, walker.seg = z.copy(), len(poly) - 1
        else:
            y_next = walker.exit(y, r)
        t_frag = t - 0.75 * l**p
        if t_frag <= 0:
            raise ChainError("chain exits the cylinder bottom; increase delta or decrease eta")
        ln = rule(y_next, t_frag)
        if doubling:
            doubling = 2 * l < ln
            ln = min(2 * l, ln)
        t = t_frag - 0.75 * ln**p
        y, l = y_next, ln
        ys.append(y.copy())
        ts.append(t)
        ls.append(l)
        dbl.append(doubling)
    t_arr = np.array(ts)
    l_arr = np.array(ls)
    if np.any(t_arr - l_arr**p < 0):
        raise ChainError("chain exits the cylinder bottom; increase delta or decrease eta")
    return Chain(np.array(ys), t_arr, l_arr, p, np.array(dbl), params.fragment)


def link_overlaps(chain: Chain) -> np.ndarray:
    """``|U_i^- cap U_{i+1}^+| / max(|R_i|, |R_{i+1}|)`` for every link."""
    rects = chain.rectangles()
    out = np.empty(max(chain.k - 1, 0))
    for i in range(chain.k - 1):
        a, b = rects[i], rects[i + 1]
        out[i] = overlap_measure(a.lower_fragment(), b.upper_fragment()) / max(a.measure, b.measure)
    return out


def comparability_ok(chain: Chain, params: ChainParams) -> bool:
    """Consecutive sidelengths obey the two-sided comparability of the construction."""
    l0, l1 = chain.l[:-1], chain.l[1:]
    up = np.where(chain.doubling[1:], 2.0, params.growth)
    lo = np.where(chain.doubling[:-1] | chain.doubling[1:], 0.5, 1.0 - params.beta)
    # ratios compared with a relative slack of a few ulps
    return bool(np.all(l1 <= up * l0 * (1 + 1e-12)) and np.all(l1 >= lo * l0 * (1 - 1e-12)))


def verify_chain(chain: Chain, params: ChainParams, qh: QHResult, q: float | None = None) -> ChainCertificate:
    """Check (i)-(iv) of the chain lemma and record the measured quantities."""
    domain = qh.domain
    q = max_geodesic_length(qh) if q is None else q
    rects = chain.rectangles()
    incl = all(admissible(domain, params.T, R, 1.0 / params.beta) for R in rects)
    z = qh.source_point
    terminal = bool(np.array_equal(chain.y[-1], z))
    if terminal:
        target = sidelength_rule(z, chain.tau, params, q, domain)
        terminal = 0.5 * target <= chain.l[-1] <= 2.0 * target
    ov = link_overlaps(chain)
    disp = float(chain.t[0] - chain.tau)
    start = chain.y[0]
    kxz = float(qh.k[domain.snap(start)])
    t0 = float(chain.t[0])
    expr = (kxz + math.log(params.T / (params.T - t0))
            + math.log(params.alpha / params.alpha_prime + 1) + 1 / params.alpha + 1)
    return ChainCertificate(
        inclusion_ok=incl, terminal_ok=terminal, overlaps=ov,
        min_overlap=float(ov.min()) if ov.size else math.inf,
        overlap_floor=params.overlap_floor(chain.n),
        displacement=disp, displacement_bound=q**params.p * params.eta,
        k=chain.k, bound_expression=expr, ratio=chain.k / expr, C_iv=params.C_iv,
        comparable=comparability_ok(chain, params),
    )


def chain_length_sum(chain: Chain) -> float:
    return float(chain.l.sum())


def calibrate_N(qh: QHResult, params: ChainParams, starts: Sequence[ParabolicPoint],
                q: float | None = None, safety: float = 1.5, rounds: int = 4) -> ChainParams:
    """Estimate ``N`` as ``safety`` times the measured ``max sum(l_i) / q``.

    ``alpha`` is re-derived from ``eta`` after each round until the measured
    ratio stays below ``N``.
    """
    q = max_geodesic_length(qh) if q is None else q
    cur = params
    worst = max(chain_length_sum(build_chain(s, qh, cur, q)) / q for s in starts)
    for _ in range(rounds):
        N = safety * worst
        cur = replace(cur, N=N, alpha=(cur.eta / (2 * N)) ** (1 / (cur.p - 1)))
        worst = max(chain_length_sum(build_chain(s, qh, cur, q)) / q for s in starts)
        if worst <= cur.N:
            return cur
    raise ChainError("calibration of N did not settle")


def sample_starts(domain: SpatialDomain, params: ChainParams, q: float, count: int,
                  rng: np.random.Generator) -> list[ParabolicPoint]:
    """Random interior cell centers with times uniform in ``(delta q^p, T)``."""
    cells = domain.interior_indices()
    pick = cells[rng.choice(len(cells), size=count, replace=True)]
    lo = params.delta * q**params.p
    times = rng.uniform(lo, params.T, size=count)
    times = np.minimum(times, np.nextafter(params.T, 0))
    return [ParabolicPoint(tuple(domain.cell_center(c)), float(s)) for c, s in zip(pick, times)]


# ---------------------------------------------------------------------------
# vertical chains


def vertical_chain(R: ParabolicRectangle, R2: ParabolicRectangle, M: float = 100.0,
                   T: float | None = None) -> Chain:
    """Constant-cube chain from ``R`` to ``R2`` with temporal overlaps ``>= L^p / M``.

    Centers are evenly spaced, which stretches or squeezes the chain to hit both
    endpoint rectangles exactly.
    """
    if R.x != R2.x or R.L != R2.L or R.p != R2.p:
        raise ChainError("vertical chains need rectangles with a common spatial cube")
    if M < 1:
        raise ChainError("M must be at least 1")
    L, p = R.L, R.p
    gap = R2.t - R.t
    y = np.array([R.x])
    if gap == 0:
        return Chain(y, np.array([R.t]), np.array([L]), p, np.zeros(1, bool), R.fragment)
    if abs(gap) < M * L:
        raise ChainError(f"|t' - t| = {abs(gap)} is below M L = {M * L}")
    if T is not None and abs(gap) > T:
        raise ChainError("|t' - t| exceeds T")
    step = 2 * L**p - L**p / M
    k = math.ceil(abs(gap) / step) + 1
    t = R.t + gap * np.arange(k) / (k - 1)
    t[-1] = R2.t
    return Chain(np.repeat(y, k, axis=0), t, np.full(k, L), p, np.zeros(k, bool), R.fragment)


def temporal_overlaps(chain: Chain) -> np.ndarray:
    """Lengths of consecutive temporal projections' intersections."""
    half = chain.l**chain.p
    lo, hi = chain.t - half, chain.t + half
    return np.minimum(hi[:-1], hi[1:]) - np.maximum(lo[:-1], lo[1:])


def chain_rows(chain: Chain, cert: ChainCertificate | None = None) -> list[list[str]]:
    n = chain.n
    head = ["j", "yx", "yy"][: 2 + (n == 2)] + ["t", "l"]
    rows = [head]
    for j in range(chain.k):
        rows.append([str(j + 1), *(repr(float(v)) for v in chain.y[j]), repr(float(chain.t[j])),
                     repr(float(chain.l[j]))])
    if cert is not None:
        rows.append(["summary", f"valid={int(cert.valid)}", f"min_overlap={cert.min_overlap!r}",
                     f"displacement={cert.displacement!r}", f"ratio_iv={cert.ratio!r}"])
    return rows


def certify_all(chains: Iterable[tuple[Chain, ChainCertificate]]) -> dict[str, float]:
    """Aggregate statistics over many certificates."""
    certs = [c for _, c in chains]
    ov = [c.min_overlap for c in certs if c.k > 1]
    return {
        "count": len(certs),
        "pass_i": int(sum(c.i_ok for c in certs)),
        "pass_ii": int(sum(c.ii_ok for c in certs)),
        "pass_iii": int(sum(c.iii_ok for c in certs)),
        "pass_iv": int(sum(c.iv_ok for c in certs)),
        "min_overlap": min(ov) if ov else math.inf,
        "C_iv": max(c.ratio for c in certs) if certs else 0.0,
    }
