"""Explicit finite differences for the doubly nonlinear model equation and supersolution checks.

The model operator is ``A(Du) = |Du|^{p-2} Du``. The solver evolves
``w = u^{p-1}`` on cell centers; complement cells act as ghost cells whose
values come from the Dirichlet data at their centers.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import SpatialDomain
from .johnnirenberg import reference_rectangle
from .oscillation import (FamilySpec, GridFunction, SeminormEstimate, admissible, rectangle_family,
                          rectangle_oscillation, seminorm_over)
from .parabolic import ParabolicRectangle
from .rng import make_rng


class PositivityError(RuntimeError):
    """The explicit step could not keep the solution positive."""


@dataclass(frozen=True)
class StructuralConstants:
    C0: float = 1.0
    C1: float = 1.0
    p: float = 2.0

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError("p must exceed 1")
        if not (self.C0 > 0 and self.C1 > 0):
            raise ValueError("structural constants must be positive")


def model_operator(grad: np.ndarray, p: float) -> np.ndarray:
    """``|xi|^{p-2} xi`` for gradient vectors along the last axis (0 at xi = 0)."""
    norm = np.linalg.norm(grad, axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(norm > 0, norm ** (p - 2), 0.0)
    return coef * grad


def growth_residuals(grad: np.ndarray, p: float) -> tuple[np.ndarray, np.ndarray]:
    """Relative deviations of ``A.xi`` from ``|xi|^p`` and ``|A|`` from ``|xi|^{p-1}``."""
    A = model_operator(grad, p)
    norm = np.linalg.norm(grad, axis=-1)
    r1 = np.einsum("...i,...i->...", A, grad) / norm**p - 1
    r2 = np.linalg.norm(A, axis=-1) / norm ** (p - 1) - 1
    return r1, r2


# ---------------------------------------------------------------------------
# boundary data


@dataclass(frozen=True)
class BoundaryData:
    """Dirichlet data ``g(x..., t)`` evaluated at ghost-cell centers."""

    func: Callable
    spec: str

    def __call__(self, *args):
        return self.func(*args)

    @classmethod
    def constant(cls, value: float) -> "BoundaryData":
        v = float(value)
        return cls(lambda *a: np.full(np.broadcast(*a).shape, v), f"constant:{v!r}")

    @classmethod
    def heat_exp(cls) -> "BoundaryData":
        """``e^{x + t}``, an exact solution for ``p = 2`` in any dimension."""
        return cls(lambda *a: np.exp(a[0] + a[-1]), "exact:heat_exp")

    @classmethod
    def from_array(cls, values: np.ndarray, h: float, origin: Sequence[float], tstep: float,
                   spec: str = "file") -> "BoundaryData":
        """Piecewise-constant data on a lattice (nearest cell, clamped at the edges)."""
        vals = np.asarray(values, float)
        org = np.asarray(origin, float)

        def g(*a):
            idx = []
            for k, x in enumerate(a[:-1]):
                i = np.floor((x - org[k]) / h).astype(int)
                idx.append(np.clip(i, 0, vals.shape[k] - 1))
            it = np.clip(np.floor(a[-1] / tstep).astype(int), 0, vals.shape[-1] - 1)
            idx = np.broadcast_arrays(*idx, it)
            return vals[tuple(idx)]

        return cls(g, spec)


def parse_boundary(text: str, loader: Callable[[str], "BoundaryData"] | None = None) -> BoundaryData:
    if text.startswith("constant:"):
        return BoundaryData.constant(float(text.split(":", 1)[1]))
    if text == "exact:heat_exp":
        return BoundaryData.heat_exp()
    if loader is None:
        raise ValueError(f"unknown boundary spec {text!r}")
    return loader(text)


# ---------------------------------------------------------------------------
# solver


@dataclass(frozen=True)
class SchemeParams:
    tau: float | None = None  # requested step; None uses the stability bound times cfl
    cfl: float = 0.5
    eps_reg: float = 1e-8
    nt_out: int = 64
    tau_floor: float = 1e-14
    max_steps: int = 50_000_000


@dataclass(frozen=True, eq=False)
class SupersolutionField:
    f: GridFunction
    gamma_low: float
    constants: StructuralConstants
    meta: dict = field(default_factory=dict)


class _Stencil:
    """Padded lattice with ghost cells and face differences."""

    PAD = 2

    def __init__(self, domain: SpatialDomain, boundary: BoundaryData):
        self.domain = domain
        self.boundary = boundary
        P = self.PAD
        self.inner = np.pad(domain.mask, P, constant_values=False)
        axes = [domain.origin[a] + (np.arange(-P, domain.shape[a] + P) + 0.5) * domain.h
                for a in range(domain.n)]
        self.grids = np.meshgrid(*axes, indexing="ij", sparse=True)
        self.ghost = ~self.inner

    def full(self, u_inner: np.ndarray, t: float) -> np.ndarray:
        U = np.asarray(self.boundary(*self.grids, np.float64(t)), float)
        U = np.broadcast_to(U, self.inner.shape).copy()
        U[self.inner] = u_inner
        return U

    def face_gradients(self, U: np.ndarray) -> list[list[np.ndarray]]:
        """Per axis ``a``: gradient components on the faces normal to ``a``."""
        h, n = self.domain.h, self.domain.n
        out = []
        for a in range(n):
            lo = [slice(None)] * n
            hi = [slice(None)] * n
            lo[a], hi[a] = slice(0, -1), slice(1, None)
            comps = []
            for b in range(n):
                if b == a:
                    comps.append((U[tuple(hi)] - U[tuple(lo)]) / h)
                else:
                    # central difference along b, averaged over the two cells of the face
                    c = np.zeros_like(U)
                    s1 = [slice(None)] * n
                    s0 = [slice(None)] * n
                    sm = [slice(None)] * n
                    s1[b], s0[b], sm[b] = slice(2, None), slice(0, -2), slice(1, -1)
                    c[tuple(sm)] = (U[tuple(s1)] - U[tuple(s0)]) / (2 * h)
                    comps.append((c[tuple(hi)] + c[tuple(lo)]) / 2)
            out.append(comps)
        return out

    def divergence(self, U: np.ndarray, p: float, eps: float) -> tuple[np.ndarray, float]:
        """Discrete ``div(|Du|^{p-2} Du)`` at all padded cells and the largest diffusivity."""
        h, n = self.domain.h, self.domain.n
        div = np.zeros_like(U)
        dmax = 0.0
        for a, comps in enumerate(self.face_gradients(U)):
            g = comps[a]
            if p == 2:
                flux = g
            else:
                mag = np.sqrt(sum(c * c for c in comps))
                if p < 2:
                    mag = np.maximum(mag, eps)
                with np.errstate(divide="ignore"):
                    coef = np.where(mag > 0, mag ** (p - 2), 0.0)
                flux = coef * g
                lo = [slice(None)] * n
                hi = [slice(None)] * n
                lo[a], hi[a] = slice(0, -1), slice(1, None)
                uface = np.minimum(U[tuple(lo)], U[tuple(hi)])
                live = (g != 0) & (uface > 0)
                if np.any(live):
                    dmax = max(dmax, float(np.max((mag[live] / uface[live]) ** (p - 2))))
            f_hi = [slice(None)] * n
            f_lo = [slice(None)] * n
            sub = [slice(None)] * n
            f_hi[a], f_lo[a], sub[a] = slice(1, None), slice(0, -1), slice(1, -1)
            div[tuple(sub)] += (flux[tuple(f_hi)] - flux[tuple(f_lo)]) / h
        return div, (1.0 if p == 2 else dmax)


def stable_tau(h: float, n: int, diffusivity: float) -> float:
    """``h^2 / (2 n D)``; for ``p = 2`` this is the discrete maximum principle bound."""
    if diffusivity <= 0:
        return math.inf
    return h * h / (2 * n * diffusivity)


def solve_model_equation(domain: SpatialDomain, T: float, p: float, boundary: BoundaryData,
                         initial: np.ndarray | Callable | None = None,
                         scheme: SchemeParams = SchemeParams(),
                         constants: StructuralConstants | None = None) -> SupersolutionField:
    """Explicit time stepping of ``w_t = div(|Du|^{p-2} Du)`` with ``w = u^{p-1}``.

    Snapshots are stored at the centers of ``scheme.nt_out`` time cells. The
    step shrinks to land on snapshot times and halves whenever positivity
    would be lost.
    """
    if not p > 1:
        raise ValueError("p must exceed 1")
    if not T > 0:
        raise ValueError("T must be positive")
    st = _Stencil(domain, boundary)
    mask = domain.mask
    axes = [domain.axis_centers(a) for a in range(domain.n)]
    centers = np.meshgrid(*axes, indexing="ij", sparse=True)
    if initial is None:
        u0 = np.broadcast_to(boundary(*centers, np.float64(0.0)), domain.shape)
    elif callable(initial):
        u0 = np.broadcast_to(initial(*centers), domain.shape)
    else:
        u0 = np.asarray(initial, float)
    u = np.array(u0[mask], dtype=float)
    if not np.all(u > 0):
        raise PositivityError("initial data must be positive")
    q = p - 1
    w = u**q
    tout = (np.arange(scheme.nt_out) + 0.5) * (T / scheme.nt_out)
    snaps = np.full((*domain.shape, scheme.nt_out), np.nan)
    h, n = domain.h, domain.n
    t = 0.0
    steps = halvings = 0
    tau_min = math.inf
    for k, target in enumerate(tout):
        while t < target:
            U = st.full(u, t)
            div, dmax = st.divergence(U, p, scheme.eps_reg)
            dw = div[st.inner]
            bound = stable_tau(h, n, dmax)
            tau = bound * scheme.cfl if scheme.tau is None else min(scheme.tau, bound)
            tau = min(tau, target - t)
            while True:
                w_new = w + tau * dw
                if np.all(w_new > 0):
                    break
                tau /= 2
                halvings += 1
                if tau < scheme.tau_floor:
                    raise PositivityError(f"positivity lost at t={t!r} with step below the floor")
            # cells with zero update keep their exact value
            moved = dw != 0
            u = np.where(moved, w_new ** (1 / q) if q != 1 else w_new, u)
            w = np.where(moved, w_new, w)
            t = t + tau if target - t > tau else target
            tau_min = min(tau_min, tau)
            steps += 1
            if steps > scheme.max_steps:
                raise RuntimeError("step budget exhausted")
        snaps[..., k][mask] = u
    snaps[~mask] = np.nan
    f = GridFunction(domain, snaps, T / scheme.nt_out)
    constants = constants or StructuralConstants(1.0, 1.0, p)
    meta = {"steps": steps, "halvings": halvings, "tau_min": tau_min, "eps_reg": scheme.eps_reg,
            "boundary": boundary.spec, "h": h}
    return SupersolutionField(f, float(np.nanmin(snaps)), constants, meta)


def exact_field(domain: SpatialDomain, T: float, nt: int, func: Callable) -> GridFunction:
    return GridFunction.from_function(domain, T, nt, func)


def max_error(field: SupersolutionField, exact: Callable) -> float:
    ref = exact_field(field.f.domain, field.f.T, field.f.nt, exact)
    return float(np.nanmax(np.abs(field.f.values - ref.values)))


# ---------------------------------------------------------------------------
# weak-form verification


PSI_MASS = 0.4439938161680794  # integral of exp(-1/(1-s^2)) over (-1, 1)


def _psi(s):
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


def _dpsi(s):
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    si = s[inside]
    out[inside] = np.exp(-1.0 / (1.0 - si**2)) * (-2.0 * si / (1.0 - si**2) ** 2)
    return out


@dataclass(frozen=True)
class Bump:
    """Tensor product of ``exp(-1/(1-s^2))`` profiles with centers and radii per coordinate."""

    center: tuple[float, ...]  # (x..., t)
    radius: tuple[float, ...]

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        c, r = np.array(self.center), np.array(self.radius)
        return c - r, c + r

    def factors(self, coords: Sequence[np.ndarray]):
        s = [(x - c) / r for x, c, r in zip(coords, self.center, self.radius)]
        return [_psi(v) for v in s], [_dpsi(v) / r for v, r in zip(s, self.radius)]


@dataclass(frozen=True)
class BumpFamily:
    """Seeded bumps; radii are fractions of the half-extent, at least ``min_cells`` cells wide."""

    count: int = 16
    seed: int = 0
    radius_frac: tuple[float, float] = (0.1, 0.3)
    min_cells: int = 8

    def draw(self, domain: SpatialDomain, T: float, tstep: float | None = None) -> list[Bump]:
        rng = make_rng(self.seed, "bumps")
        lo, hi = self.radius_frac
        steps = [domain.h] * domain.n + [tstep if tstep is not None else 0.0]
        out = []
        for _ in range(self.count):
            rad, cen = [], []
            for (a, b), step in zip([*domain.bounds, (0.0, T)], steps):
                r = max(rng.uniform(lo, hi) * (b - a) / 2, self.min_cells * step)
                rad.append(r)
                cen.append(rng.uniform(a + r, b - r) if b - a > 2 * r else (a + b) / 2)
            out.append(Bump(tuple(cen), tuple(rad)))
        return out


@dataclass(frozen=True)
class WeakFormResult:
    bump: Bump
    value: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.value >= -self.tol


@dataclass(frozen=True)
class SupersolutionVerdict:
    passed: bool
    results: tuple[WeakFormResult, ...]
    skipped: int

    @property
    def worst(self) -> float:
        return min((r.value / r.tol for r in self.results), default=math.inf)


def _bump_inside(u: GridFunction, bump: Bump) -> bool:
    lo, hi = bump.support()
    if lo[-1] <= 0 or hi[-1] >= u.T:
        return False
    return u.domain.contains_box(lo[:-1], hi[:-1])


def weak_form(u: GridFunction, p: float, bump: Bump) -> tuple[float, float, float]:
    """``int (|Du|^{p-2} Du . Dphi - u^{p-1} phi_t)``, the bump mass and the field scale.

    Derivatives of both ``u`` and the bump are differences across cell faces,
    so the discrete sum satisfies summation by parts exactly and reproduces
    ``int u_t phi`` for fields linear in time.
    """
    dom = u.domain
    n, h = dom.n, dom.h
    lo, hi = bump.support()
    # restrict to the bounding lattice block of the support plus one cell
    sl = []
    for a in range(n):
        i0 = max(int(math.floor((lo[a] - dom.origin[a]) / h)) - 1, 0)
        i1 = min(int(math.ceil((hi[a] - dom.origin[a]) / h)) + 1, dom.shape[a])
        sl.append(slice(i0, i1))
    k0 = max(int(math.floor(lo[-1] / u.tstep)) - 1, 0)
    k1 = min(int(math.ceil(hi[-1] / u.tstep)) + 1, u.nt)
    block = np.asarray(u.values[tuple(sl) + (slice(k0, k1),)], float)
    xs = [dom.origin[a] + (np.arange(sl[a].start, sl[a].stop) + 0.5) * h for a in range(n)]
    ts = (np.arange(k0, k1) + 0.5) * u.tstep
    vol = dom.cell_volume * u.tstep
    phi_f, _ = bump.factors([*xs, ts])
    shape = [len(x) for x in xs] + [len(ts)]

    def outer(factors, shp):
        out = np.ones(shp)
        for a, f in enumerate(factors):
            s = [1] * len(shp)
            s[a] = len(f)
            out = out * f.reshape(s)
        return out

    phi = outer(phi_f, shape)
    # time term: bump differenced across the time faces of each cell
    dt = u.tstep
    tc, tr = bump.center[-1], bump.radius[-1]
    phi_dt = (_psi((ts + dt / 2 - tc) / tr) - _psi((ts - dt / 2 - tc) / tr)) / dt
    filled = np.where(np.isnan(block), 0.0, block)
    valid = ~np.isnan(block)
    w = filled ** (p - 1)
    time_term = float(np.sum(w * outer(phi_f[:-1] + [phi_dt], shape))) * vol
    # flux term on spatial faces
    flux_term = 0.0
    for a in range(n):
        lo_s = [slice(None)] * (n + 1)
        hi_s = [slice(None)] * (n + 1)
        lo_s[a], hi_s[a] = slice(0, -1), slice(1, None)
        ok = valid[tuple(lo_s)] & valid[tuple(hi_s)]
        g = (filled[tuple(hi_s)] - filled[tuple(lo_s)]) / h
        comps = [g]
        for b in range(n):
            if b == a:
                continue
            c = np.zeros_like(filled)
            s1 = [slice(None)] * (n + 1)
            s0 = [slice(None)] * (n + 1)
            sm = [slice(None)] * (n + 1)
            s1[b], s0[b], sm[b] = slice(2, None), slice(0, -2), slice(1, -1)
            c[tuple(sm)] = (filled[tuple(s1)] - filled[tuple(s0)]) / (2 * h)
            comps.append((c[tuple(hi_s)] + c[tuple(lo_s)]) / 2)
        mag = np.sqrt(sum(v * v for v in comps))
        with np.errstate(divide="ignore", invalid="ignore"):
            coef = np.where(mag > 0, mag ** (p - 2), 0.0) if p != 2 else np.ones_like(mag)
        shape_f = list(shape)
        shape_f[a] -= 1
        faces = [f if b != a else np.diff(f) / h for b, f in enumerate(phi_f)]
        dphi = outer(faces, shape_f)
        flux_term += float(np.sum(np.where(ok, coef * g * dphi, 0.0))) * vol
    mass = float(np.prod([r * PSI_MASS for r in bump.radius]))
    scale = float(np.max(np.where(phi > 0, w, 0.0))) if np.any(phi > 0) else 0.0
    return flux_term - time_term, mass, scale


def verify_supersolution(u: GridFunction | SupersolutionField, p: float,
                         family: BumpFamily = BumpFamily(), tol_factor: float = 1e-3,
                         bumps: Sequence[Bump] | None = None) -> SupersolutionVerdict:
    """Weak-form test against nonnegative bumps; passes iff every value is ``>= -tol``.

    ``tol = tol_factor * (bump mass) * (max of u^{p-1} on the support)``.
    Bumps whose support leaves the open cylinder are skipped with a warning.
    """
    f = u.f if isinstance(u, SupersolutionField) else u
    bumps = family.draw(f.domain, f.T, f.tstep) if bumps is None else bumps
    results, skipped = [], 0
    for b in bumps:
        if not _bump_inside(f, b):
            warnings.warn(f"test bump at {b.center} touches the boundary; skipped", stacklevel=2)
            skipped += 1
            continue
        val, mass, scale = weak_form(f, p, b)
        results.append(WeakFormResult(b, val, tol_factor * mass * scale))
    return SupersolutionVerdict(bool(results) and all(r.ok for r in results), tuple(results), skipped)


# ---------------------------------------------------------------------------
# measure decay of log f


@dataclass(frozen=True)
class Lemma62Report:
    rectangle: ParabolicRectangle
    beta: float  # median of log f on R
    C_prime: float
    exponent: float  # min over the two displayed measures; inf when vacuous
    C_fit: float
    passed: bool
    vacuous: bool


def _power_exponent(lam: np.ndarray, meas: np.ndarray) -> float:
    pos = meas > 0
    if pos.sum() < 2:
        return math.inf
    slope, _ = np.polyfit(np.log(lam[pos]), np.log(meas[pos]), 1)
    return float(-slope)


def lemma62_check(field: SupersolutionField | GridFunction, rects: Sequence[ParabolicRectangle], p: float,
                  sigma: float = 1.0, slack: float = 0.2,
                  lambdas: np.ndarray | None = None) -> list[Lemma62Report]:
    """Power decay of ``|{log f - beta - C' > lam} cap R^-|`` and ``|{beta - log f - C' > lam} cap R^+|``.

    ``lambdas`` is in units of ``log f``; the default is 32 geometric points on
    ``[0.05, 20]``. Tails with fewer than two positive samples are vacuous.
    """
    f = field.f if isinstance(field, SupersolutionField) else field
    lam = np.geomspace(0.05, 20.0, 32) if lambdas is None else np.asarray(lambdas, float)
    logf = f.map(np.log)
    out = []
    for R in rects:
        if not admissible(f.domain, f.T, R, sigma):
            continue
        full = logf.cells(R.box())
        lower = logf.cells(R.lower_half())
        upper = logf.cells(R.upper_half())
        if full.size == 0 or lower.size == 0 or upper.size == 0:
            continue
        beta = float(np.median(full))
        Cp = max(0.0, float(np.median(lower - beta)), float(np.median(beta - upper)))
        dm = np.sort(lower - beta - Cp)
        dp = np.sort(beta - upper - Cp)
        m_minus = (dm.size - np.searchsorted(dm, lam, side="right")) / dm.size
        m_plus = (dp.size - np.searchsorted(dp, lam, side="right")) / dp.size
        e = min(_power_exponent(lam, m_minus), _power_exponent(lam, m_plus))
        C_fit = float(max(np.max(m_minus * lam ** (p - 1)), np.max(m_plus * lam ** (p - 1))))
        vac = math.isinf(e)
        out.append(Lemma62Report(R, beta, Cp, e, C_fit, vac or e >= p - 1 - slack, vac))
    return out


# ---------------------------------------------------------------------------
# -log f in PBMO


@dataclass(frozen=True)
class LogPBMO:
    power: SeminormEstimate  # b = min((p-1)/2, 1), lag R
    pbmo: SeminormEstimate  # b = 1, lag S
    b: float


def log_pbmo_check(field: SupersolutionField | GridFunction, p: float, sigma: float = 1.0,
                   spec: FamilySpec = FamilySpec(),
                   family: Sequence[ParabolicRectangle] | None = None) -> LogPBMO:
    f = field.f if isinstance(field, SupersolutionField) else field
    u = f.map(lambda v: -np.log(v))
    family = rectangle_family(f.domain, f.T, p, spec) if family is None else family
    b = min((p - 1) / 2, 1.0)
    power = seminorm_over(u, family, sigma, b, "R", spec.describe())
    pbmo = seminorm_over(u, family, sigma, 1.0, "S", spec.describe())
    return LogPBMO(power, pbmo, b)


# ---------------------------------------------------------------------------
# global integrability


@dataclass(frozen=True)
class EpsilonReport:
    eps: float | None
    integral: float
    refined: float
    c: float
    delta: float
    ok: bool
    tried: tuple[tuple[float, float, float], ...] = ()


def power_integral(f: GridFunction, eps: float, delta: float) -> float:
    vals, w = f.time_slab_weighted(0.0, f.T - delta)
    return float(np.sum(vals**eps)) * f.cell_volume * w


def global_integrability(field: SupersolutionField | GridFunction, refined: SupersolutionField | GridFunction,
                         delta: float, p: float, tol: float = 0.1, eps_floor: float = 1.0 / 1024,
                         z=None) -> EpsilonReport:
    """Largest ``eps = 2^-k`` whose ``int f^eps`` over ``Omega x (0, T - delta)`` is
    stable within ``tol`` under one refinement.

    ``c`` is the optimal constant of ``-log f`` on the reference rectangle at ``z``
    (the domain's center by default).
    """
    f = field.f if isinstance(field, SupersolutionField) else field
    g = refined.f if isinstance(refined, SupersolutionField) else refined
    if not 0 < delta < f.T:
        raise ValueError("delta must lie in (0, T)")
    if z is None:
        z = [(a + b) / 2 for a, b in f.domain.bounds]
    u = f.map(lambda v: -np.log(v))
    c = rectangle_oscillation(u, reference_rectangle(u, z, p)).a
    tried = []
    eps = 1.0
    while eps >= eps_floor:
        a, b = power_integral(f, eps, delta), power_integral(g, eps, delta)
        tried.append((eps, a, b))
        if math.isfinite(a) and math.isfinite(b) and abs(b / a - 1) <= tol:
            return EpsilonReport(eps, a, b, c, delta, True, tuple(tried))
        eps /= 2
    last = tried[-1]
    return EpsilonReport(None, last[1], last[2], c, delta, False, tuple(tried))
