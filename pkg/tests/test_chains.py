from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pbmolab.chains import (ChainError, ChainParams, build_chain, calibrate_N, certify_all, chain_length_sum,
                            chain_rows, comparability_ok, link_overlaps, sample_starts, sidelength_rule,
                            temporal_overlaps, verify_chain, vertical_chain)
from pbmolab.geometry import l_domain, max_geodesic_length, quasihyperbolic_distances
from pbmolab.parabolic import ParabolicPoint, ParabolicRectangle
from pbmolab.rng import make_rng


@pytest.fixture(scope="module")
def lsetup():
    dom = l_domain(1 / 32)
    qh = quasihyperbolic_distances(dom, (0.25, 0.25))
    q = max_geodesic_length(qh)
    params = ChainParams.from_eta(1.0, 20.0, 2.0, beta=0.5, delta=2.0, T=8.0)
    starts = sample_starts(dom, params, q, 12, make_rng(1, "test", "starts"))
    params = calibrate_N(qh, params, starts, q)
    return dom, qh, q, params, starts


def test_alpha_from_eta():
    pr = ChainParams.from_eta(0.5, 10.0, 3.0)
    assert pr.alpha == pytest.approx((0.5 / 20.0) ** 0.5)
    assert pr.alpha_ok
    assert not replace(pr, alpha=2 * pr.alpha).alpha_ok


def test_params_validation():
    with pytest.raises(ValueError):
        ChainParams(beta=1.0)
    with pytest.raises(ValueError):
        ChainParams(eta=0.0)
    with pytest.raises(ValueError):
        ChainParams(p=1.0)


@given(st.floats(0.01, 0.99), st.floats(1.1, 5.0))
def test_growth_and_floor(beta, p):
    pr = ChainParams(beta=beta, p=p)
    assert pr.growth >= 1 + beta
    assert 0 < pr.overlap_floor(2) < pr.overlap_floor(1)


def test_sidelength_rule():
    pr = ChainParams(beta=0.5, alpha=0.1, alpha_prime=0.05, T=4.0, p=2.0)
    assert sidelength_rule((0,), 0.0, pr, 1.0, d=0.1) == pytest.approx(0.05)
    assert sidelength_rule((0,), 3.99, pr, 1.0, d=1.0) == pytest.approx(0.5 * 0.1)
    assert sidelength_rule((0,), 0.0, pr, 1.0, d=1.0) == pytest.approx(0.1)
    assert sidelength_rule((0,), 0.0, pr, 1.0, d=1.0, capped=True) == pytest.approx(0.05)
    with pytest.raises(ChainError):
        sidelength_rule((0,), 4.0, pr, 1.0, d=1.0)
    with pytest.raises(ChainError):
        sidelength_rule((0,), 0.0, pr, 1.0, d=0.0)


def test_chain_certificates(lsetup):
    dom, qh, q, params, starts = lsetup
    pairs = []
    for s in starts:
        c = build_chain(s, qh, params, q)
        cert = verify_chain(c, params, qh, q)
        pairs.append((c, cert))
        assert cert.i_ok and cert.comparable
        assert cert.iii_ok
        assert np.all(link_overlaps(c) > 0)
        assert np.allclose(c.y[-1], qh.source_point)
        assert chain_length_sum(c) / q <= params.N
    stats = certify_all(pairs)
    assert stats["count"] == len(starts) and stats["pass_i"] == len(starts)
    assert isinstance(stats["pass_i"], int)


def test_chain_rows(lsetup):
    dom, qh, q, params, starts = lsetup
    c = build_chain(starts[0], qh, params, q)
    rows = chain_rows(c, verify_chain(c, params, qh, q))
    assert rows[0] == ["j", "yx", "yy", "t", "l"]
    assert len(rows) == c.k + 2 and rows[-1][0] == "summary"


def test_start_time_window(lsetup):
    dom, qh, q, params, _ = lsetup
    with pytest.raises(ChainError):
        build_chain(ParabolicPoint((0.25, 0.25), 0.5 * params.delta * q**2), qh, params, q)
    with pytest.raises(ChainError):
        build_chain(ParabolicPoint((0.25, 0.25), 1.0), qh, replace(params, T=params.delta * q**2), q)


def test_comparability_detects_jumps(lsetup):
    dom, qh, q, params, starts = lsetup
    c = build_chain(starts[0], qh, params, q)
    if c.k < 2:
        pytest.skip("chain too short")
    l = c.l.copy()
    l[1] = 10 * l[0]
    assert not comparability_ok(replace(c, l=l, doubling=np.zeros(c.k, bool)), params)


@given(st.floats(0.05, 0.5), st.floats(1.0, 10.0), st.floats(0.5, 1.0))
def test_vertical_chain_overlaps(L, M, frac):
    p = 2.0
    R = ParabolicRectangle((0.5,), 0.0, L, p)
    gap = M * L + frac * 10
    R2 = ParabolicRectangle((0.5,), gap, L, p)
    c = vertical_chain(R, R2, M)
    assert c.t[0] == R.t and c.t[-1] == R2.t
    assert np.all(temporal_overlaps(c) >= L**p / M * (1 - 1e-9))


def test_vertical_chain_errors():
    R = ParabolicRectangle((0.5,), 0.0, 0.1, 2.0)
    with pytest.raises(ChainError):
        vertical_chain(R, ParabolicRectangle((0.4,), 5.0, 0.1, 2.0))
    with pytest.raises(ChainError):
        vertical_chain(R, ParabolicRectangle((0.5,), 1.0, 0.1, 2.0), M=100.0)
    with pytest.raises(ChainError):
        vertical_chain(R, ParabolicRectangle((0.5,), 20.0, 0.1, 2.0), M=0.5)
    assert vertical_chain(R, R).k == 1
