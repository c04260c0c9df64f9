import math

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from pbmolab.parabolic import (Box, ParabolicRectangle, cell_ranges, default_cp, format_rectangle, grid_measure,
                               overlap_measure, parabolic_distance, parse_rectangle)

mpmath.mp.prec = 200

pos = st.floats(1e-3, 1e3, allow_nan=False)
ps = st.floats(1.05, 6.0)


def _ulps(x: float, exact) -> float:
    return float(abs(mpmath.mpf(x) - exact) / mpmath.mpf(math.ulp(x)))


@given(pos, ps, st.integers(1, 2), st.floats(0.01, 10.0))
def test_measures_correctly_rounded(L, p, n, lam):
    R = ParabolicRectangle((0.0,) * n, 0.0, L, p).scaled(lam)
    side = mpmath.mpf(lam) * mpmath.mpf(L)
    vol = side ** (n + mpmath.mpf(p))
    f = mpmath.mpf(R.fragment)
    for got, exact in ((R.measure, 2 * vol), (R.half_measure, vol), (R.quarter_measure, vol / 2),
                       (R.fragment_measure, (f * side) ** (n + mpmath.mpf(p)) / 2)):
        assert _ulps(got, exact) <= 0.5 + 1e-9


@given(pos, ps, st.floats(0.1, 10.0))
def test_scaling_multiplies_measure(L, p, lam):
    R = ParabolicRectangle((0.0, 0.0), 0.0, L, p)
    assert R.scaled(lam).measure == pytest.approx(lam ** (2 + p) * R.measure, rel=1e-12)
    assert R.scaled(lam).scaled(1 / lam).L == pytest.approx(L, rel=1e-14)


def test_subregions_geometry():
    R = ParabolicRectangle((0.5,), 1.0, 0.5, 2.0)
    sub = R.sub_regions()
    assert sub["R+"].measure + sub["R-"].measure == R.measure
    assert sub["S+"].inside(sub["R+"]) and sub["S-"].inside(sub["R-"])
    assert sub["U+"].inside(sub["S+"]) and sub["U-"].inside(sub["S-"])
    assert sub["S+"].measure == R.quarter_measure
    assert overlap_measure(sub["R+"], sub["R-"]) == 0


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), ps)
def test_distance_is_symmetric_and_separates(x1, t1, x2, t2, p):
    a, b = (x1, t1), (x2, t2)
    assert parabolic_distance(a, b, p) == parabolic_distance(b, a, p)
    assert parabolic_distance(a, a, p) == 0
    if a != b:
        assert parabolic_distance(a, b, p) > 0


@given(st.floats(0.05, 2.0), ps, st.floats(-1, 1), st.floats(-1, 1))
def test_upper_quarter_is_metric_ball(L, p, sx, st_):
    # points of S^+ lie within L/2 of its center in the parabolic distance
    R = ParabolicRectangle((0.0,), 0.0, L, p)
    c = R.quarter_center(+1)
    S = R.upper_quarter()
    pt = c + np.array([sx, st_]) * S.half * 0.999
    assert parabolic_distance(pt, c, p, default_cp(p)) <= L / 2 * (1 + 1e-9)


def test_distance_validation():
    with pytest.raises(ValueError):
        parabolic_distance((0, 0), (1, 1), 1.0)
    with pytest.raises(ValueError):
        parabolic_distance((0, 0), (1, 1), 2.0, cp=0.0)
    with pytest.raises(ValueError):
        ParabolicRectangle((0.0,), 0.0, -1.0, 2.0)
    with pytest.raises(ValueError):
        ParabolicRectangle((0.0,), 0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        ParabolicRectangle((0.0,), 0.0, 1.0, 2.0).scaled(0.0)


@given(st.integers(0, 63), st.integers(1, 64), st.integers(1, 64))
def test_half_open_tiling(a, wa, wb):
    # two adjacent boxes on lattice faces count every cell exactly once
    h = 1 / 64
    mask = np.ones(64, bool)
    lo, mid, hi = a * h, (a + wa) * h, (a + wa + wb) * h
    assume(hi <= 1.0)
    left = Box(((lo + mid) / 2, 0.5), ((mid - lo) / 2, 0.5))
    right = Box(((mid + hi) / 2, 0.5), ((hi - mid) / 2, 0.5))
    whole = Box(((lo + hi) / 2, 0.5), ((hi - lo) / 2, 0.5))
    gm = [grid_measure(B, mask, h, 1 / 8, 8) for B in (left, right, whole)]
    assert gm[0] + gm[1] == pytest.approx(gm[2], rel=1e-12)
    assert gm[2] == pytest.approx(whole.measure, rel=1e-9)


def test_cell_ranges_centers():
    assert cell_ranges([0.0], [1.0], [0.0], [0.25]) == [(0, 4)]
    assert cell_ranges([0.13], [0.2], [0.0], [0.25]) == [(1, 1)]
    assert cell_ranges([0.125], [0.375], [0.0], [0.25]) == [(0, 1)]


@given(st.lists(st.floats(-10, 10), min_size=1, max_size=2), st.floats(0, 10), pos, ps)
def test_rectangle_literal_roundtrip(x, t, L, p):
    R = ParabolicRectangle(tuple(x), t, L, p)
    back = parse_rectangle(format_rectangle(R))
    assert back == R


def test_rectangle_literal_invalid():
    with pytest.raises(ValueError):
        parse_rectangle("1,2,3")
    with pytest.raises(ValueError):
        parse_rectangle("a,b,c,d")
