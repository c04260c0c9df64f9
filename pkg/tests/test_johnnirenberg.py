import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pbmolab.geometry import box_domain, fit_qhbc
from pbmolab.johnnirenberg import (DistributionSamples, Slab, TailError, classify_tail, distribution_from_values,
                                   distribution_function, exp_integral, fit_exponential_tail, global_jn, lambda_grid,
                                   layer_cake, local_jn, local_survey, norm_equivalence)
from pbmolab.oscillation import FamilySpec, GridFunction, rectangle_family
from pbmolab.parabolic import ParabolicRectangle


def _exponential_values(B, n=20000):
    # deterministic quantiles: |{v > lam}| / n = exp(-B lam)
    return -np.log((np.arange(n) + 0.5) / n) / B


@given(arrays(float, st.integers(1, 50), elements=st.floats(-10, 10)), st.floats(-5, 5),
       st.sampled_from(["plus", "minus"]))
def test_distribution_nonincreasing(values, c, sign):
    lam = lambda_grid(1.0)
    s = distribution_from_values(values, 0.5, c, sign, lam)
    assert np.all(np.diff(s.measures) <= 0)
    assert s.measures[0] <= s.base_measure == values.size * 0.5


@pytest.mark.parametrize("B", [0.5, 2.0, 7.0])
def test_fit_recovers_exponential(B):
    vals = _exponential_values(B)
    lam = lambda_grid(1 / B)
    s = distribution_from_values(vals, 1.0, 0.0, "plus", lam)
    fit = fit_exponential_tail(s)
    assert fit.B == pytest.approx(B, rel=0.02)
    assert fit.A == pytest.approx(1.0, rel=0.05)
    assert fit.residual < 0.05


def test_weight_matches_repetition():
    vals = _exponential_values(1.0, 500)
    lam = lambda_grid(1.0)
    a = distribution_from_values(vals, 0.25, 0.0, "plus", lam, weight=4)
    b = distribution_from_values(np.repeat(vals, 4), 0.25, 0.0, "plus", lam)
    assert np.array_equal(a.measures, b.measures) and a.base_measure == b.base_measure


def test_tail_classification():
    lam = lambda_grid(1.0)
    vac = distribution_from_values(np.array([0.0, 0.0, 3.0]), 1.0, 0.0, "plus", lam)
    assert classify_tail(vac) == ("vacuous", None)
    flat = DistributionSamples("x", 0.0, lam, np.full(lam.size, 20.0), 40.0, 1.0)
    assert classify_tail(flat)[0] == "short"
    with pytest.raises(TailError):
        fit_exponential_tail(flat)
    tag, fit = classify_tail(distribution_from_values(_exponential_values(1.0), 1.0, 0.0, "plus", lam))
    assert tag == "fit" and fit.B > 0
    with pytest.raises(ValueError):
        distribution_from_values(np.array([]), 1.0, 0.0, "plus", lam)
    with pytest.raises(ValueError):
        distribution_from_values(np.array([1.0]), 1.0, 0.0, "up", lam)


@given(arrays(float, st.integers(1, 200), elements=st.floats(0, 3)), st.floats(0.1, 2.0))
def test_layer_cake_matches_direct_sum(dev, gamma):
    direct = float(np.sum(np.exp(gamma * dev))) * 0.01
    assert layer_cake(dev, gamma, 0.01) == pytest.approx(direct, rel=2e-3)


@pytest.fixture(scope="module")
def log_field():
    dom = box_domain([(0.0, 1.0)], 1 / 128)
    x = dom.axis_centers(0)
    spatial = np.log(np.minimum(x, 1 - x))
    return GridFunction.time_independent(dom, 1.0, 4096, spatial)


def test_local_jn_on_log_distance(log_field):
    R = ParabolicRectangle((0.25,), 0.5, 0.5, 2.0)
    loc = local_jn(log_field, R)
    assert loc.plus.B > 0 and loc.minus.B > 0
    s = local_survey(log_field, rectangle_family(log_field.domain, 1.0, 2.0, FamilySpec(levels=3)))
    assert s.total > 0 and s.pass_rate >= 0.9
    assert s.total == s.fitted + s.vacuous + s.failed == len(s.records)


def test_global_variants(log_field):
    qhbc = fit_qhbc(log_field.domain, (0.5,))
    g = global_jn(log_field, qhbc, 0.05, 2.0, scale=1.0)
    assert g.fit is not None and g.fit.B > 0
    R = ParabolicRectangle((0.5,), 0.5, 0.5, 2.0)
    r = global_jn(log_field, qhbc, 0.5, 2.0, variant="rectangle", rectangle=R, scale=1.0)
    assert r.samples.base_measure == R.measure
    with pytest.raises(ValueError):
        global_jn(log_field, qhbc, 0.5, 2.0, variant="rectangle")
    with pytest.raises(ValueError):
        global_jn(log_field, qhbc, 0.5, 2.0, variant="other")


def test_exp_integral_plus_and_minus(log_field):
    for sign in ("plus", "minus"):
        rep = exp_integral(log_field, 0.1, 0.5, -2.0, sign, refined=log_field)
        assert rep.integral >= rep.base_measure > 0
        assert rep.layer_cake == pytest.approx(rep.integral, rel=1e-2)
        assert rep.stability == 0.0
    with pytest.raises(ValueError):
        exp_integral(log_field, 0.1, 0.0, 0.0)
    with pytest.raises(ValueError):
        exp_integral(log_field, 2.0, 1.0, 0.0)


def test_slab_region(log_field):
    s = distribution_function(log_field, Slab(0.25, 0.75), -10.0, "plus", lambda_grid(1.0))
    assert s.base_measure == pytest.approx(0.5 * log_field.domain.measure)


def test_norm_ratio_at_least_one():
    dom = box_domain([(0.0, 1.0)], 1 / 32)
    u = GridFunction.from_function(dom, 1.0, 64, lambda x, t: np.sin(7 * t) + x)
    r = norm_equivalence(u, 2.0, 2.0, FamilySpec(levels=4))
    assert r.ratio >= 1.0
    with pytest.raises(ValueError):
        norm_equivalence(u, 1.0, 2.0)
