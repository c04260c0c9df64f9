import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pbmolab.geometry import box_domain
from pbmolab.oscillation import FamilySpec, GridFunction, rectangle_family
from pbmolab.pde import (PSI_MASS, BoundaryData, Bump, BumpFamily, PositivityError, SchemeParams,
                         StructuralConstants, global_integrability, growth_residuals, lemma62_check, log_pbmo_check,
                         max_error, model_operator, parse_boundary, power_integral, solve_model_equation,
                         stable_tau, verify_supersolution, weak_form)

vectors = arrays(float, st.tuples(st.integers(1, 10), st.integers(1, 2)), elements=st.floats(-1e3, 1e3))


@given(vectors, st.floats(1.1, 6.0))
def test_model_operator_growth(grad, p):
    nz = np.linalg.norm(grad, axis=-1) > 1e-6
    r1, r2 = growth_residuals(grad[nz], p)
    assert np.all(np.abs(r1) < 1e-9) and np.all(np.abs(r2) < 1e-9)
    assert np.all(model_operator(np.zeros((3, 2)), p) == 0)


def test_structural_validation():
    with pytest.raises(ValueError):
        StructuralConstants(p=1.0)
    with pytest.raises(ValueError):
        StructuralConstants(C0=0.0)


def test_constant_state_is_preserved():
    dom = box_domain([(0.0, 1.0), (0.0, 1.0)], 1 / 16)
    sol = solve_model_equation(dom, 0.1, 3.0, BoundaryData.constant(2.0), scheme=SchemeParams(nt_out=8))
    assert np.all(sol.f.values[dom.mask] == 2.0)


def test_heat_converges():
    errs = []
    for h in (1 / 16, 1 / 32):
        dom = box_domain([(0.0, 1.0)], h)
        sol = solve_model_equation(dom, 0.25, 2.0, BoundaryData.heat_exp(),
                                   scheme=SchemeParams(tau=h * h / 4, nt_out=16))
        errs.append(max_error(sol, lambda x, t: np.exp(x + t)))
    assert errs[1] < errs[0] / 3


def test_positivity_required():
    dom = box_domain([(0.0, 1.0)], 1 / 8)
    with pytest.raises(PositivityError):
        solve_model_equation(dom, 0.1, 2.0, BoundaryData.constant(1.0), initial=lambda x: x - 0.5)
    with pytest.raises(ValueError):
        solve_model_equation(dom, 0.1, 1.0, BoundaryData.constant(1.0))


def test_stable_tau():
    assert stable_tau(0.1, 2, 1.0) == pytest.approx(0.0025)
    assert stable_tau(0.1, 1, 0.0) == math.inf


def test_boundary_specs():
    g = parse_boundary("constant:3")
    assert np.all(g(np.zeros(2), np.zeros(2)) == 3.0)
    assert parse_boundary("exact:heat_exp")(np.array(1.0), np.array(1.0)) == pytest.approx(math.e**2)
    with pytest.raises(ValueError):
        parse_boundary("file:x")
    arr = BoundaryData.from_array(np.arange(8.0).reshape(4, 2), 0.25, (0.0,), 0.5)
    assert arr(np.array([-1.0, 0.3, 9.0]), np.array([0.1, 0.6, 0.1])).tolist() == [0.0, 3.0, 6.0]


def _linear_in_time(slope):
    dom = box_domain([(0.0, 1.0)], 1 / 64)
    return GridFunction.from_function(dom, 1.0, 128, lambda x, t: 2.0 + slope * t + 0.0 * x)


def test_weak_form_reproduces_time_derivative():
    # u = 2 + t: -int u phi_t = int phi, so the weak form equals the bump mass
    u = _linear_in_time(1.0)
    bump = Bump((0.5, 0.5), (0.2, 0.2))
    val, mass, _ = weak_form(u, 2.0, bump)
    assert mass == pytest.approx((0.2 * PSI_MASS) ** 2)
    assert val == pytest.approx(mass, rel=1e-3)


def test_supersolution_verdicts():
    assert verify_supersolution(_linear_in_time(1.0), 2.0, BumpFamily(count=6)).passed
    assert not verify_supersolution(_linear_in_time(-1.0), 2.0, BumpFamily(count=6)).passed
    dom = box_domain([(0.0, 1.0)], 1 / 32)
    sol = solve_model_equation(dom, 0.25, 2.0, BoundaryData.heat_exp(),
                               scheme=SchemeParams(tau=1 / 4096, nt_out=64))
    v = verify_supersolution(sol, 2.0, BumpFamily(count=8))
    assert v.passed and v.skipped == 0


def test_bump_family_deterministic():
    dom = box_domain([(0.0, 1.0)], 1 / 64)
    a = BumpFamily(seed=5).draw(dom, 1.0, 1 / 128)
    assert a == BumpFamily(seed=5).draw(dom, 1.0, 1 / 128)
    assert a != BumpFamily(seed=6).draw(dom, 1.0, 1 / 128)
    assert all(r >= 8 / 128 for b in a for r in b.radius[-1:])


def test_lemma62_and_log_pbmo():
    dom = box_domain([(0.0, 1.0)], 1 / 32)
    sol = solve_model_equation(dom, 0.5, 2.0, BoundaryData.heat_exp(),
                               scheme=SchemeParams(tau=1 / 4096, nt_out=128))
    rects = rectangle_family(dom, 0.5, 2.0, FamilySpec(levels=3, n_random=0))
    reps = lemma62_check(sol, rects, 2.0)
    assert reps and all(math.isfinite(r.beta) for r in reps)
    assert sum(r.passed for r in reps) >= 0.9 * len(reps)
    lp = log_pbmo_check(sol, 2.0, spec=FamilySpec(levels=3))
    assert lp.b == 0.5 and lp.pbmo.value >= 0 and lp.power.value >= 0


def test_global_integrability_constant_field():
    dom = box_domain([(0.0, 1.0)], 1 / 16)
    f = GridFunction.from_function(dom, 1.0, 16, lambda x, t: 3.0 + 0.0 * x * t)
    assert power_integral(f, 0.5, 0.25) == pytest.approx(math.sqrt(3) * 0.75)
    rep = global_integrability(f, f, 0.25, 2.0)
    assert rep.ok and rep.eps == 1.0
    with pytest.raises(ValueError):
        global_integrability(f, f, 2.0, 2.0)
