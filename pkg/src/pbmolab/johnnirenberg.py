"""Superlevel-set decay of oscillations: local and global exponential tails and integrability."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import QHBCFit
from .oscillation import (FamilySpec, GridFunction, NoAdmissibleRectangle, admissible, pbmo_seminorm,
                          rectangle_family, rectangle_oscillation, seminorm_over)
from .parabolic import Box, ParabolicRectangle


class TailError(ValueError):
    """Too few positive samples to fit an exponential tail."""


@dataclass(frozen=True)
class Slab:
    """``Omega x [t0, t1)`` on the grid (time cells with centers in the interval)."""

    t0: float
    t1: float

    def describe(self) -> str:
        return f"Omega x ({self.t0!r}, {self.t1!r})"


def region_values(u: GridFunction, region) -> tuple[np.ndarray, int]:
    """Distinct cell values of ``region`` and their common multiplicity."""
    if isinstance(region, Slab):
        return u.time_slab_weighted(region.t0, region.t1)
    if isinstance(region, Box):
        return u.cells_weighted(region)
    raise TypeError(f"unsupported region {region!r}")


def describe(region) -> str:
    if isinstance(region, Slab):
        return region.describe()
    lo, hi = region.lo, region.hi
    return "box[" + " x ".join(f"({float(a)!r}, {float(b)!r})" for a, b in zip(lo, hi)) + "]"


def lambda_grid(scale: float = 1.0, lo: float = 0.05, hi: float = 20.0, num: int = 32) -> np.ndarray:
    """Geometric grid spanning ``[lo, hi] * scale``."""
    if not scale > 0:
        raise ValueError("lambda scale must be positive")
    return np.geomspace(lo * scale, hi * scale, num)


@dataclass(frozen=True)
class DistributionSamples:
    base: str
    c: float
    lambdas: np.ndarray
    measures: np.ndarray
    base_measure: float
    cell_volume: float = 0.0
    sign: str = "plus"

    def rows(self) -> list[list[str]]:
        return [["lambda", "measure"]] + [[repr(float(a)), repr(float(b))]
                                         for a, b in zip(self.lambdas, self.measures)]


def deviations(values: np.ndarray, c: float, sign: str) -> np.ndarray:
    if sign == "plus":
        return np.maximum(values - c, 0.0)
    if sign == "minus":
        return np.maximum(c - values, 0.0)
    raise ValueError("sign must be 'plus' or 'minus'")


def distribution_from_values(values: np.ndarray, cell_volume: float, c: float, sign: str,
                             lambdas: np.ndarray, base: str = "values", weight: int = 1) -> DistributionSamples:
    """Superlevel measures of the deviations; each value stands for ``weight`` cells."""
    if values.size == 0:
        raise ValueError("empty base set")
    dev = np.sort(deviations(values, c, sign))
    counts = (dev.size - np.searchsorted(dev, lambdas, side="right")) * weight
    return DistributionSamples(base, float(c), np.asarray(lambdas, float), counts * cell_volume,
                               dev.size * weight * cell_volume, cell_volume, sign)


def distribution_function(u: GridFunction, region, c: float, sign: str = "plus",
                          lambdas: np.ndarray | None = None) -> DistributionSamples:
    """Grid measure of ``{(u - c)^+ > lambda}`` or ``{(c - u)^+ > lambda}`` within ``region``."""
    lambdas = lambda_grid() if lambdas is None else np.asarray(lambdas, float)
    vals, w = region_values(u, region)
    return distribution_from_values(vals, u.cell_volume, c, sign, lambdas, describe(region), w)


@dataclass(frozen=True)
class JNFit:
    A: float
    B: float
    residual: float  # RMS of log residuals
    lam_lo: float
    lam_hi: float
    used: int


def fit_exponential_tail(samples: DistributionSamples, min_cells: int = 10) -> JNFit:
    """Least squares of ``log(measure / |base|) = log A - B lambda`` over the usable tail.

    Samples below ``min_cells`` grid cells are dropped as quadrature noise.
    """
    m = samples.measures
    keep = (m > 0) & (m >= min_cells * samples.cell_volume * (1 - 1e-12))
    if keep.sum() < 4:
        raise TailError(f"only {int(keep.sum())} usable samples; need at least 4")
    if np.unique(m[keep]).size < 2:
        raise TailError("tail is flat over the usable window")
    lam = samples.lambdas[keep]
    y = np.log(m[keep] / samples.base_measure)
    X = np.stack([np.ones_like(lam), -lam], axis=1)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    res = y - X @ coef
    return JNFit(float(math.exp(coef[0])), float(coef[1]), float(np.sqrt(np.mean(res**2))),
                 float(lam[0]), float(lam[-1]), int(keep.sum()))


# ---------------------------------------------------------------------------
# local


def classify_tail(samples: DistributionSamples, min_cells: int = 10) -> tuple[str, JNFit | None]:
    """``("fit", fit)``, ``("vacuous", None)`` when the whole tail lies below the
    noise floor, or ``("short", None)`` when too few samples survive."""
    total = samples.measures.max() if samples.measures.size else 0.0
    if total < min_cells * samples.cell_volume * (1 - 1e-12):
        return "vacuous", None
    try:
        return "fit", fit_exponential_tail(samples, min_cells)
    except TailError:
        return "short", None


@dataclass(frozen=True)
class LocalJN:
    rectangle: ParabolicRectangle
    a: float
    oscillation: float
    plus: JNFit
    minus: JNFit
    samples: tuple[DistributionSamples, DistributionSamples] = field(repr=False)


def local_samples(u: GridFunction, R: ParabolicRectangle, sigma: float = 1.0,
                  lambdas: np.ndarray | None = None, scale: str = "deviation"):
    """Distribution samples on ``U^+`` (plus part) and ``U^-`` (minus part) around ``a_R``.

    Without explicit ``lambdas`` the geometric grid is scaled per fragment:
    ``"deviation"`` puts its top at the largest deviation on the fragment,
    ``"oscillation"`` scales it by the rectangle's oscillation.
    """
    osc = rectangle_oscillation(u, R, sigma)
    out = []
    for box, sign in ((R.upper_fragment(), "plus"), (R.lower_fragment(), "minus")):
        lam = lambdas
        if lam is None:
            if scale == "deviation":
                vals, _ = u.cells_weighted(box)
                top = float(deviations(vals, osc.a, sign).max()) if vals.size else 0.0
                lam = lambda_grid(top / 20 if top > 0 else 1.0)
            elif scale == "oscillation":
                lam = lambda_grid(osc.value if osc.value > 0 else 1.0)
            else:
                raise ValueError("scale must be 'deviation' or 'oscillation'")
        out.append(distribution_function(u, box, osc.a, sign, lam))
    return osc, out[0], out[1]


def local_jn(u: GridFunction, R: ParabolicRectangle, sigma: float = 1.0,
             lambdas: np.ndarray | None = None, min_cells: int = 10, scale: str = "deviation") -> LocalJN:
    """Tails of ``(u - a_R)^+`` on ``U^+`` and ``(a_R - u)^+`` on ``U^-``; errors on short tails."""
    osc, plus, minus = local_samples(u, R, sigma, lambdas, scale)
    return LocalJN(R, osc.a, osc.value, fit_exponential_tail(plus, min_cells),
                   fit_exponential_tail(minus, min_cells), (plus, minus))


@dataclass(frozen=True)
class TailRecord:
    rectangle: ParabolicRectangle
    status: str  # "fitted" | "vacuous" | "failed"
    tags: tuple[str, str]  # plus and minus tail: "fit" | "vacuous" | "short" | "bad"
    fits: tuple[JNFit | None, JNFit | None]


@dataclass(frozen=True)
class LocalSurvey:
    total: int
    fitted: int  # both tails fitted with B > 0 and small residual
    vacuous: int  # at least one tail below the noise floor, the other fitted or vacuous
    failed: int
    max_residual: float
    min_B: float
    records: tuple[TailRecord, ...] = field(default=(), repr=False)

    @property
    def pass_rate(self) -> float:
        return (self.fitted + self.vacuous) / self.total if self.total else 0.0


def local_survey(u: GridFunction, rects, sigma: float = 1.0, max_residual: float = 0.5,
                 min_cells: int = 10, scale: str = "deviation") -> LocalSurvey:
    """Classify both fragment tails of every admissible rectangle.

    Rectangles that are not admissible, or whose fragments contain no grid
    cells, are skipped.
    """
    res, Bs, records = [], [], []
    for R in rects:
        if not admissible(u.domain, u.T, R, sigma):
            continue
        if any(u.cells_weighted(b)[0].size == 0 for b in (R.upper_fragment(), R.lower_fragment())):
            continue
        _, plus, minus = local_samples(u, R, sigma, None, scale)
        tags, fits = [], []
        for s in (plus, minus):
            tag, fit = classify_tail(s, min_cells)
            if fit is not None:
                res.append(fit.residual)
                Bs.append(fit.B)
                if not (fit.B > 0 and fit.residual <= max_residual):
                    tag = "bad"
            tags.append(tag)
            fits.append(fit)
        if tags == ["fit", "fit"]:
            status = "fitted"
        elif all(t in ("fit", "vacuous") for t in tags):
            status = "vacuous"
        else:
            status = "failed"
        records.append(TailRecord(R, status, tuple(tags), tuple(fits)))
    count = {k: sum(r.status == k for r in records) for k in ("fitted", "vacuous", "failed")}
    return LocalSurvey(len(records), count["fitted"], count["vacuous"], count["failed"],
                       max(res) if res else math.nan, min(Bs) if Bs else math.nan, tuple(records))


# ---------------------------------------------------------------------------
# global


def reference_rectangle(u: GridFunction, z, p: float, sigma: float = 1.0, iters: int = 60) -> ParabolicRectangle:
    """Largest rectangle centered at ``(z, T/2)`` whose ``sigma``-dilate is admissible."""
    z = tuple(np.atleast_1d(np.asarray(z, float)))
    hi = max(b - a for a, b in u.domain.bounds) + (u.T / 2) ** (1 / p)

    def ok(L):
        R = ParabolicRectangle(z, u.T / 2, L, p)
        return admissible(u.domain, u.T, R, sigma) and u.cells_weighted(R.upper_quarter())[0].size > 0 \
            and u.cells_weighted(R.lower_quarter())[0].size > 0

    lo = hi
    for _ in range(64):
        lo /= 2
        if ok(lo):
            break
    else:
        raise NoAdmissibleRectangle("no admissible rectangle centered at the reference point")
    hi = 2 * lo
    for _ in range(iters):
        mid = (lo + hi) / 2
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return ParabolicRectangle(z, u.T / 2, lo, p)


@dataclass(frozen=True)
class GlobalJN:
    fit: JNFit | None
    c: float
    delta: float
    samples: DistributionSamples = field(repr=False)
    reference: ParabolicRectangle | None = None
    variant: str = "cylinder"


def global_jn(u: GridFunction, qhbc: QHBCFit, delta: float, p: float, variant: str = "cylinder",
              rectangle: ParabolicRectangle | None = None, scale: float | None = None,
              sigma: float = 1.0, min_cells: int = 10, spec: FamilySpec = FamilySpec()) -> GlobalJN:
    """Plus-part tail over ``Omega x (delta q^p, T)`` or over ``R_delta^+``.

    ``c`` is the optimal constant of the reference rectangle. The lambda grid is
    scaled by ``scale``, defaulting to the seminorm estimate of ``u``. The fit
    is ``None`` when the tail has too few usable samples.
    """
    if variant == "cylinder":
        t0 = delta * qhbc.q**p
        if t0 >= u.T:
            raise ValueError("delta q^p >= T leaves an empty base set")
        ref = reference_rectangle(u, qhbc.z, p, sigma)
        region = Slab(t0, u.T)
    elif variant == "rectangle":
        if rectangle is None:
            raise ValueError("the rectangle variant needs a rectangle")
        if not 0 < delta < 2:
            raise ValueError("delta must lie in (0, 2)")
        ref = rectangle
        Lp = rectangle.L**p
        lo = rectangle.t - (1 - delta) * Lp
        hi = rectangle.t + Lp
        half_t = (hi - lo) / 2
        region = Box((*rectangle.x, lo + half_t), (rectangle.L / 2,) * rectangle.n + (half_t,))
    else:
        raise ValueError("variant must be 'cylinder' or 'rectangle'")
    c = rectangle_oscillation(u, ref, sigma).a
    if scale is None:
        scale = pbmo_seminorm(u, sigma, p, spec).value
    lambdas = lambda_grid(scale if scale > 0 else 1.0)
    samples = distribution_function(u, region, c, "plus", lambdas)
    if variant == "rectangle":
        samples = replace(samples, base_measure=rectangle.measure)
    try:
        fit = fit_exponential_tail(samples, min_cells)
    except TailError:
        fit = None
    return GlobalJN(fit, c, delta, samples, ref, variant)


def delta_sweep(u: GridFunction, qhbc: QHBCFit, deltas, p: float, scale: float, **kw) -> list[GlobalJN]:
    return [global_jn(u, qhbc, d, p, scale=scale, **kw) for d in deltas]


# ---------------------------------------------------------------------------
# exponential integrability


@dataclass(frozen=True)
class IntegrabilityReport:
    gamma: float
    c: float
    delta: float
    integral: float
    base_measure: float
    layer_cake: float
    sign: str = "plus"
    refined: float | None = None

    @property
    def stability(self) -> float | None:
        if self.refined is None:
            return None
        return abs(self.refined / self.integral - 1)

    def row(self, fit: JNFit | None = None) -> list[str]:
        A = repr(fit.A) if fit else ""
        B = repr(fit.B) if fit else ""
        r = repr(fit.residual) if fit else ""
        return [A, B, r, repr(self.gamma), repr(self.c), repr(self.delta), repr(self.integral)]


def integrability_base(u: GridFunction, delta: float, sign: str) -> Slab:
    if not 0 < delta < u.T:
        raise ValueError("delta must lie in (0, T)")
    return Slab(delta, u.T) if sign == "plus" else Slab(0.0, u.T - delta)


def layer_cake(dev: np.ndarray, gamma: float, cell_volume: float, num: int = 1 << 14) -> float:
    """``|base| + int_0^inf e^s |{gamma dev > s}| ds`` by the trapezoid rule."""
    base = dev.size * cell_volume
    top = gamma * float(dev.max()) if dev.size else 0.0
    if top == 0:
        return base
    s = np.linspace(0.0, top, num)
    sd = np.sort(gamma * dev)
    meas = (sd.size - np.searchsorted(sd, s, side="right")) * cell_volume
    return base + float(np.trapezoid(np.exp(s) * meas, s))


def _exp_sum(u: GridFunction, delta: float, gamma: float, c: float, sign: str):
    vals, w = region_values(u, integrability_base(u, delta, sign))
    dev = deviations(vals, c, sign)
    vol = u.cell_volume * w
    return float(np.sum(np.exp(gamma * dev))) * vol, dev, vol


def exp_integral(u: GridFunction, delta: float, gamma: float, c: float, sign: str = "plus",
                 refined: GridFunction | None = None) -> IntegrabilityReport:
    """``int e^{gamma (u-c)^+}`` over ``Omega x (delta, T)``, or the minus part over ``Omega x (0, T-delta)``."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    integral, dev, vol = _exp_sum(u, delta, gamma, c, sign)
    lc = layer_cake(dev, gamma, vol)
    ref_val = None if refined is None else _exp_sum(refined, delta, gamma, c, sign)[0]
    return IntegrabilityReport(gamma, c, delta, integral, dev.size * vol, lc, sign, ref_val)


# ---------------------------------------------------------------------------
# local-to-global


@dataclass(frozen=True)
class NormRatio:
    ratio: float
    local: float  # seminorm for sigma
    global_: float  # seminorm for sigma = 1


def norm_equivalence(u: GridFunction, sigma: float, p: float, spec: FamilySpec = FamilySpec()) -> NormRatio:
    """``seminorm(1) / seminorm(sigma)`` over one family; ``0/0`` is taken as 1."""
    if not sigma > 1:
        raise ValueError("sigma must exceed 1")
    family = rectangle_family(u.domain, u.T, p, spec)
    s1 = seminorm_over(u, family, 1.0).value
    ss = seminorm_over(u, family, sigma).value
    if ss == 0:
        ratio = 1.0 if s1 == 0 else math.inf
    else:
        ratio = s1 / ss
    return NormRatio(ratio, ss, s1)

