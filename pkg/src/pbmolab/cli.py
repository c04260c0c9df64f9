"""Command-line front end.

``pbmolab <subcommand> --config FILE [--seed S] [--out DIR] [--refine K]``

Every subcommand writes CSV files and updates ``manifest.json`` in the output
directory. Exit status: 0 on success, 1 when a certificate or verdict fails,
2 on input errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .chains import (ChainError, ChainParams, build_chain, calibrate_N, certify_all, chain_rows, sample_starts,
                     verify_chain)
from .config import ConfigError, ExperimentConfig, load_config
from .formats import FormatError, atomic_write, distance_rows, read_grid_function, write_csv, write_grid_function
from .geometry import (DistanceField, DomainError, QHBCFit, QHResult, SpatialDomain, distance_to_boundary,
                       fit_qhbc, quasihyperbolic_distances, whitney_cover)
from .johnnirenberg import (exp_integral, global_jn, local_survey, norm_equivalence)
from .oscillation import (FamilySpec, GridFunction, NoAdmissibleRectangle, RectangleRejected, format_seminorm_rows,
                          pbmo_seminorm, rectangle_family)
from .parabolic import ParabolicRectangle
from .pde import (BoundaryData, BumpFamily, PositivityError, SchemeParams, SupersolutionField,
                  global_integrability, lemma62_check, log_pbmo_check, max_error, parse_boundary,
                  solve_model_equation, verify_supersolution)
from .rng import make_rng

log = logging.getLogger("pbmolab")

SUBCOMMANDS = ("qh", "cover", "chain", "pbmo", "jn", "global-jn", "expint", "solve", "verify-super",
               "lemma62", "log-pbmo", "integrability")

INPUT_ERRORS = (ConfigError, FormatError, DomainError, ChainError, NoAdmissibleRectangle, RectangleRejected,
                ValueError, OSError)


@dataclass
class OpResult:
    files: list[Path] = field(default_factory=list)
    passed: bool = True
    summary: dict = field(default_factory=dict)


def _center(R: ParabolicRectangle) -> str:
    return ";".join(repr(v) for v in (*R.x, R.t))


class Run:
    """Lazily built artifacts shared between subcommands of one invocation."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.cache: dict = {}

    def _memo(self, key, build: Callable):
        if key not in self.cache:
            self.cache[key] = build()
        return self.cache[key]

    def out(self, name: str) -> Path:
        return self.cfg.out / name

    def rng(self, *streams) -> np.random.Generator:
        return make_rng(self.cfg.seed, *streams)

    # geometry
    def domain(self, k: int = 1) -> SpatialDomain:
        return self._memo(("domain", k), lambda: self.cfg.build_domain(k))

    def dist(self, k: int = 1) -> DistanceField:
        return self._memo(("dist", k), lambda: distance_to_boundary(self.domain(k)))

    def z(self) -> tuple[float, ...]:
        sec = self.cfg.section("qh")
        if "z" in sec.items:
            return sec.floats("z", ())
        # deepest interior cell, first in C order
        d = self.dist()
        idx = np.unravel_index(int(np.argmax(d.values)), d.values.shape)
        return tuple(float(v) for v in self.domain().cell_center(idx))

    def qh(self, k: int = 1) -> QHResult:
        return self._memo(("qh", k), lambda: quasihyperbolic_distances(self.domain(k), self.z(), self.dist(k)))

    def qhbc(self, k: int = 1) -> QHBCFit:
        return self._memo(("qhbc", k), lambda: fit_qhbc(self.domain(k), self.z(), self.qh(k)))

    # fields
    def scheme(self, domain: SpatialDomain) -> SchemeParams:
        s = self.cfg.section("solve")
        tau = s.text("tau", "auto")
        if tau == "auto":
            tau_v = None
        elif tau.startswith("h2*"):
            tau_v = float(tau[3:]) * domain.h**2
        else:
            tau_v = s.num("tau", 0.0)
            if not tau_v > 0:
                raise ConfigError("[solve] tau must be positive, 'auto' or 'h2*<factor>'")
        return SchemeParams(tau=tau_v, cfl=s.num("cfl", 0.5), eps_reg=s.num("eps_reg", 1e-8),
                            nt_out=s.integer("nt_out", 64))

    def boundary(self) -> BoundaryData:
        spec = self.cfg.section("solve").text("boundary", "exact:heat_exp")

        def loader(text: str) -> BoundaryData:
            if not text.startswith("file:"):
                raise ConfigError(f"unknown boundary spec {text!r}")
            g = read_grid_function(self.cfg.resolve(text[5:]), self.domain().origin)
            return BoundaryData.from_array(np.nan_to_num(g.values, nan=1.0), g.domain.h, g.domain.origin,
                                           g.tstep, text)

        return parse_boundary(spec, loader)

    def solution(self, k: int = 1) -> SupersolutionField:
        def build():
            dom = self.domain(k)
            c = self.cfg.cylinder
            init = self.cfg.section("solve").text("initial", "boundary")
            initial = None
            if init.startswith("constant:"):
                v = float(init[9:])
                initial = lambda *x: np.full(np.broadcast(*x).shape, v)  # noqa: E731
            elif init != "boundary":
                raise ConfigError("[solve] initial must be 'boundary' or 'constant:<v>'")
            log.info("solving on h=%r", dom.h)
            return solve_model_equation(dom, c.T, c.p, self.boundary(), initial, self.scheme(dom))
        return self._memo(("solution", k), build)

    def field(self, k: int = 1) -> GridFunction:
        def build():
            sec = self.cfg.section("field")
            src = sec.text("source", "solve")
            c = self.cfg.cylinder
            nt = sec.integer("nt", 1024)
            if src == "solve":
                return self.solution(k).f
            if src == "log_distance":
                dom = self.domain(k)
                d = self.dist(k).values
                return GridFunction.time_independent(dom, c.T, nt, -np.log(np.where(dom.mask, d, 1.0)))
            if src.startswith("constant:"):
                v = float(src[9:])
                dom = self.domain(k)
                return GridFunction.time_independent(dom, c.T, nt, np.where(dom.mask, v, np.nan))
            if src.startswith("file:"):
                if k != 1:
                    raise ConfigError("a field read from a file cannot be refined")
                g = read_grid_function(self.cfg.resolve(src[5:]), self.domain().origin)
                if abs(g.T - c.T) > 1e-12 * c.T:
                    raise ConfigError("field file T differs from [cylinder] T")
                return g
            raise ConfigError(f"unknown field source {src!r}")
        return self._memo(("field", k), build)

    def refinable(self) -> bool:
        return not self.cfg.section("field").text("source", "solve").startswith("file:")

    def family_spec(self, section: str) -> FamilySpec:
        s = self.cfg.section(section)
        d = FamilySpec()
        return FamilySpec(s.integer("levels", d.levels), s.integer("max_per_axis", d.max_per_axis),
                          s.integer("max_times", d.max_times), s.integer("n_random", d.n_random), self.cfg.seed)


# ---------------------------------------------------------------------------
# operations


def op_qh(run: Run) -> OpResult:
    qh, fit = run.qh(), run.qhbc()
    f1 = write_csv(run.out("distance.csv"), distance_rows(run.dist(), qh))
    n = run.domain().n
    head = ["zx", "zy"][:n] + ["K", "q", "nu", "residual", "ok"]
    f2 = write_csv(run.out("qhbc.csv"), [head, [*fit.z, fit.K, fit.q, fit.nu, fit.residual, fit.ok]])
    return OpResult([f1, f2], True, {"K": fit.K, "q": fit.q})


def op_cover(run: Run) -> OpResult:
    s = run.cfg.section("cover")
    dom = run.domain()
    beta = s.num("beta", 0.5)
    cap = s.num("cap", float(run.dist().values.max()))
    cov = whitney_cover(dom, beta, cap, run.z(), run.dist())
    head = ["cx", "cy"][: dom.n] + ["side"]
    rows = [head] + [[*c, sd] for c, sd in zip(cov.centers, cov.sides)]
    f1 = write_csv(run.out("cover.csv"), rows)
    f2 = write_csv(run.out("cover_summary.csv"), [["count", "max_overlap", "mean_overlap", "beta", "cap"],
                                                  [len(cov.sides), cov.max_overlap, cov.mean_overlap, beta, cap]])
    return OpResult([f1, f2], True, {"count": len(cov.sides), "max_overlap": cov.max_overlap})


def chain_params(run: Run) -> ChainParams:
    s = run.cfg.section("chain")
    c = run.cfg.cylinder
    return ChainParams.from_eta(
        s.num("eta", 1.0), s.num("N", 20.0), c.p, beta=s.num("beta", 0.5), alpha_prime=s.num("alpha_prime", 1.0),
        delta=s.num("delta", c.delta), T=s.num("T", c.T), fragment=s.num("fragment", 1 / 8),
        C_iv=s.num("C_iv", 64.0))


def op_chain(run: Run) -> OpResult:
    s = run.cfg.section("chain")
    params = chain_params(run)
    qh = run.qh()
    q = run.qhbc().q
    if params.delta * q**params.p >= params.T:
        raise ChainError(f"delta q^p = {params.delta * q**params.p!r} >= T = {params.T!r}")
    starts = sample_starts(run.domain(), params, q, s.integer("count", 100), run.rng("chain", "starts"))
    params = calibrate_N(qh, params, starts[: s.integer("calibrate", 20)], q, s.num("safety", 1.5))
    results = []
    for st in starts:
        ch = build_chain(st, qh, params, q)
        results.append((ch, verify_chain(ch, params, qh, q)))
    files = []
    for i, (ch, cert) in enumerate(results):
        files.append(write_csv(run.out(f"chains/chain_{i:03d}.csv"), chain_rows(ch, cert)))
    head = ["id", "k", "valid", "i", "ii", "iii", "iv", "min_overlap", "overlap_floor", "displacement",
            "displacement_bound", "bound_expression", "ratio_iv", "comparable"]
    rows = [head]
    for i, (ch, c) in enumerate(results):
        rows.append([i, c.k, c.valid, c.i_ok, c.ii_ok, c.iii_ok, c.iv_ok, c.min_overlap, c.overlap_floor,
                     c.displacement, c.displacement_bound, c.bound_expression, c.ratio, c.comparable])
    files.append(write_csv(run.out("chain_certificates.csv"), rows))
    agg = certify_all(results)
    keys = sorted(agg)
    files.append(write_csv(run.out("chain_summary.csv"),
                           [keys + ["N", "alpha", "q"], [agg[k] for k in keys] + [params.N, params.alpha, q]]))
    passed = all(c.valid for _, c in results)
    return OpResult(files, passed, {"valid": sum(c.valid for _, c in results), "count": len(results)})


def op_pbmo(run: Run) -> OpResult:
    s = run.cfg.section("pbmo")
    u = run.field()
    p = run.cfg.cylinder.p
    spec = run.family_spec("pbmo")
    family = rectangle_family(u.domain, u.T, p, spec)
    sigmas = s.floats("sigmas", (run.cfg.cylinder.sigma,))
    est = [pbmo_seminorm(u, sg, p, spec, family) for sg in sigmas]
    files = [write_csv(run.out("seminorm.csv"), format_seminorm_rows(est))]
    rows = [["sigma", "ratio", "seminorm_sigma", "seminorm_1"]]
    for sg in sigmas:
        if sg > 1:
            r = norm_equivalence(u, sg, p, spec)
            rows.append([sg, r.ratio, r.local, r.global_])
    if len(rows) > 1:
        files.append(write_csv(run.out("norm_ratio.csv"), rows))
    return OpResult(files, True, {f"sigma={e.sigma!r}": e.value for e in est})


def op_jn(run: Run) -> OpResult:
    s = run.cfg.section("jn")
    u = run.field()
    c = run.cfg.cylinder
    spec = run.family_spec("jn")
    # fragments must span a few cells in space and in time
    cells = s.num("min_side_cells", 4)
    fragment = s.num("fragment", 1 / 8)
    rects = [R for R in rectangle_family(u.domain, u.T, c.p, spec, fragment)
             if R.L * fragment >= cells * u.domain.h and 0.5 * (R.L * fragment) ** c.p >= cells * u.tstep]
    max_res = s.num("max_residual", 0.5)
    survey = local_survey(u, rects, c.sigma, max_res, s.integer("min_cells", 10), s.text("scale", "deviation"))
    head = ["center", "L", "status", "tag_plus", "A_plus", "B_plus", "residual_plus",
            "tag_minus", "A_minus", "B_minus", "residual_minus"]
    rows = [head]
    for rec in survey.records:
        cols = [_center(rec.rectangle), rec.rectangle.L, rec.status]
        for tag, fit in zip(rec.tags, rec.fits):
            cols += [tag, *((fit.A, fit.B, fit.residual) if fit else ("", "", ""))]
        rows.append(cols)
    f1 = write_csv(run.out("local_jn.csv"), rows)
    f2 = write_csv(run.out("local_jn_summary.csv"),
                   [["total", "fitted", "vacuous", "failed", "pass_rate", "max_residual", "min_B"],
                    [survey.total, survey.fitted, survey.vacuous, survey.failed, survey.pass_rate,
                     survey.max_residual, survey.min_B]])
    passed = survey.total > 0 and survey.pass_rate >= s.num("min_pass", 0.95)
    return OpResult([f1, f2], passed, {"pass_rate": survey.pass_rate, "total": survey.total})


def _global(run: Run, k: int = 1):
    c = run.cfg.cylinder
    s = run.cfg.section("global-jn")
    u = run.field(k)
    spec = run.family_spec("global-jn")
    scale = pbmo_seminorm(u, c.sigma, c.p, spec).value
    return run._memo(("global", k), lambda: global_jn(u, run.qhbc(k), c.delta, c.p, sigma=c.sigma, scale=scale,
                                                       min_cells=s.integer("min_cells", 10), spec=spec))


SUMMARY_HEAD = ["A", "B", "residual", "gamma", "c", "delta", "integral"]


def op_global_jn(run: Run) -> OpResult:
    g = _global(run)
    s = run.cfg.section("global-jn")
    f1 = write_csv(run.out("global_jn_tail.csv"), g.samples.rows())
    fit = g.fit
    row = [fit.A, fit.B, fit.residual] if fit else ["", "", ""]
    f2 = write_csv(run.out("global_jn.csv"), [SUMMARY_HEAD, row + ["", g.c, g.delta, ""]])
    passed = fit is not None and fit.B > 0 and fit.residual <= s.num("max_residual", 0.5)
    return OpResult([f1, f2], passed, {"B": fit.B if fit else math.nan})


def op_expint(run: Run) -> OpResult:
    s = run.cfg.section("expint")
    c = run.cfg.cylinder
    g = _global(run)
    if g.fit is None or not g.fit.B > 0:
        return OpResult([], False, {"reason": "no positive global decay rate"})
    gamma = s.num("gamma_factor", 0.5) * g.fit.B
    u = run.field()
    refined = run.field(2) if run.refinable() else None
    tol = s.num("tolerance", 0.05)
    rows = [SUMMARY_HEAD + ["sign", "refined", "stability", "layer_cake"]]
    passed = True
    for sign in ("plus", "minus"):
        r = exp_integral(u, c.delta, gamma, g.c, sign, refined)
        stab = r.stability
        rows.append(r.row(g.fit) + [sign, "" if r.refined is None else r.refined,
                                    "" if stab is None else stab, r.layer_cake])
        passed &= math.isfinite(r.integral) and (stab is None or stab <= tol)
    return OpResult([write_csv(run.out("expint.csv"), rows)], passed, {"gamma": gamma})


def op_solve(run: Run) -> OpResult:
    sol = run.solution()
    files = [write_grid_function(run.out("field.csv"), sol.f)]
    m = sol.meta
    head = ["h", "T", "p", "nt_out", "steps", "halvings", "tau_min", "gamma_low", "boundary", "max_error"]
    err = ""
    if m["boundary"] == "exact:heat_exp" and run.cfg.cylinder.p == 2:
        err = max_error(sol, lambda *a: np.exp(a[0] + a[-1]))
    c = run.cfg.cylinder
    files.append(write_csv(run.out("solve.csv"), [head, [m["h"], c.T, c.p, sol.f.nt, m["steps"], m["halvings"],
                                                         m["tau_min"], sol.gamma_low, m["boundary"], err]]))
    return OpResult(files, True, {"max_error": err})


def op_verify_super(run: Run) -> OpResult:
    s = run.cfg.section("verify-super")
    u = run.field()
    fam = BumpFamily(s.integer("count", 16), run.cfg.seed, s.floats("radius_frac", (0.1, 0.3)),
                     s.integer("min_cells", 8))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        v = verify_supersolution(u, run.cfg.cylinder.p, fam, s.num("tol_factor", 1e-3))
    for w in caught:
        log.warning("%s", w.message)
    n = u.domain.n
    head = ["cx", "cy"][:n] + ["ct"] + ["rx", "ry"][:n] + ["rt", "value", "tol", "ok"]
    rows = [head] + [[*r.bump.center, *r.bump.radius, r.value, r.tol, r.ok] for r in v.results]
    f1 = write_csv(run.out("weak_form.csv"), rows)
    f2 = write_csv(run.out("weak_form_summary.csv"), [["passed", "tested", "skipped", "worst"],
                                                      [v.passed, len(v.results), v.skipped, v.worst]])
    return OpResult([f1, f2], v.passed, {"passed": v.passed, "tested": len(v.results)})


def op_lemma62(run: Run) -> OpResult:
    s = run.cfg.section("lemma62")
    c = run.cfg.cylinder
    u = run.field()
    rects = rectangle_family(u.domain, u.T, c.p, run.family_spec("lemma62"))
    reps = lemma62_check(u, rects, c.p, c.sigma, s.num("slack", 0.2))
    rows = [["center", "L", "beta", "C_prime", "exponent", "C_fit", "passed", "vacuous"]]
    for r in reps:
        rows.append([_center(r.rectangle), r.rectangle.L, r.beta, r.C_prime, r.exponent, r.C_fit, r.passed,
                     r.vacuous])
    rate = sum(r.passed for r in reps) / len(reps) if reps else 0.0
    f1 = write_csv(run.out("lemma62.csv"), rows)
    f2 = write_csv(run.out("lemma62_summary.csv"), [["count", "passed", "vacuous", "pass_rate"],
                                                    [len(reps), sum(r.passed for r in reps),
                                                     sum(r.vacuous for r in reps), rate]])
    return OpResult([f1, f2], bool(reps) and rate >= s.num("min_pass", 0.9), {"pass_rate": rate})


def op_log_pbmo(run: Run) -> OpResult:
    s = run.cfg.section("log-pbmo")
    c = run.cfg.cylinder
    spec = run.family_spec("log-pbmo")
    levels = [2**j for j in range(s.integer("refinements", 2) + 1)] if run.refinable() else [1]
    rows = [["refine", "h", "b", "power_seminorm", "pbmo_seminorm"]]
    vals = []
    for k in levels:
        u = run.field(k)
        r = log_pbmo_check(u, c.p, c.sigma, spec)
        rows.append([k * run.cfg.refine, u.domain.h, r.b, r.power.value, r.pbmo.value])
        vals.append(r.power.value)
    spread = max(vals) / min(vals) - 1 if min(vals) > 0 else (0.0 if max(vals) == 0 else math.inf)
    f = write_csv(run.out("log_pbmo.csv"), rows)
    return OpResult([f], spread <= s.num("tolerance", 0.2), {"spread": spread})


def op_integrability(run: Run) -> OpResult:
    s = run.cfg.section("integrability")
    c = run.cfg.cylinder
    if not run.refinable():
        raise ConfigError("integrability needs a refinable field source")
    rep = global_integrability(run.field(), run.field(2), c.delta, c.p, s.num("tolerance", 0.1),
                               s.num("eps_floor", 1 / 1024), s.floats("z", ()) or None)
    rows = [["eps", "integral", "refined", "c", "delta", "ok"]]
    rows += [[e, a, b, rep.c, rep.delta, e == rep.eps] for e, a, b in rep.tried]
    f = write_csv(run.out("integrability.csv"), rows)
    passed = rep.ok and rep.eps is not None and rep.eps >= s.num("min_eps", 0.05)
    return OpResult([f], passed, {"eps": rep.eps})


OPERATIONS: dict[str, Callable[[Run], OpResult]] = {
    "qh": op_qh, "cover": op_cover, "chain": op_chain, "pbmo": op_pbmo, "jn": op_jn,
    "global-jn": op_global_jn, "expint": op_expint, "solve": op_solve, "verify-super": op_verify_super,
    "lemma62": op_lemma62, "log-pbmo": op_log_pbmo, "integrability": op_integrability,
}


# ---------------------------------------------------------------------------
# driver


def _update_manifest(cfg: ExperimentConfig, ops: dict[str, dict]) -> Path:
    path = cfg.out / "manifest.json"
    data = {}
    if path.exists():
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError:
            data = {}
    if data.get("config_hash") != cfg.digest():
        data = {}
    data.update({"config_hash": cfg.digest(), "version": __version__, "seed": cfg.seed, "refine": cfg.refine})
    data.setdefault("operations", {}).update(ops)
    return atomic_write(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


def run(subcommand: str, cfg: ExperimentConfig) -> int:
    if subcommand == "all":
        listed = cfg.section("experiment").text("all", ",".join(SUBCOMMANDS))
        names = tuple(n.strip() for n in listed.split(",") if n.strip())
    else:
        names = (subcommand,)
    bad = [n for n in names if n not in OPERATIONS]
    if bad:
        raise ConfigError(f"unknown subcommand(s) {', '.join(bad)}")
    r = Run(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    atomic_write(cfg.out / "config.ini", cfg.canonical())
    status, ops = 0, {}
    for name in names:
        t0 = time.perf_counter()
        try:
            res = OPERATIONS[name](r)
        except PositivityError as exc:
            log.error("%s: %s", name, exc)
            res = OpResult([], False, {"error": str(exc)})
        dt = time.perf_counter() - t0
        ops[name] = {"files": [str(f.relative_to(cfg.out)) for f in res.files], "seconds": round(dt, 3),
                     "status": "ok" if res.passed else "fail",
                     "summary": {k: (v if isinstance(v, (int, str, bool)) or v is None else float(v))
                                 for k, v in res.summary.items()}}
        log.info("%-13s %-4s %7.2fs %s", name, ops[name]["status"], dt, res.summary)
        if not res.passed:
            status = 1
    _update_manifest(cfg, ops)
    return status


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pbmolab", description="Parabolic BMO experiments.")
    ap.add_argument("subcommand", choices=[*SUBCOMMANDS, "all"])
    ap.add_argument("--config", required=True, help="experiment config file")
    ap.add_argument("--seed", type=int, default=None, help="override [experiment] seed (u64)")
    ap.add_argument("--out", default=None, help="override [experiment] out")
    ap.add_argument("--refine", type=int, default=None, help="global grid refinement multiplier")
    ap.add_argument("-q", "--quiet", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s",
                        stream=sys.stderr)
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out, refine=args.refine)
        return run(args.subcommand, cfg)
    except INPUT_ERRORS as exc:
        print(f"pbmolab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
