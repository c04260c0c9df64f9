import os

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from pbmolab.config import ConfigError, number, parse_config
from pbmolab.formats import (FormatError, atomic_write, csv_text, distance_rows, format_mask, parse_mask,
                             read_csv, read_grid_function, write_csv, write_grid_function)
from pbmolab.geometry import SpatialDomain, box_domain, distance_to_boundary, l_domain
from pbmolab.oscillation import GridFunction


def _connected(mask):
    lab, n = ndimage.label(mask)
    if n == 0:
        return None
    return lab == 1 + int(np.argmax(ndimage.sum(mask, lab, range(1, n + 1))))


@given(arrays(bool, st.tuples(st.integers(1, 8), st.integers(1, 8))), st.sampled_from([0.5, 1 / 3, 1 / 64]))
def test_mask_roundtrip_2d(mask, h):
    mask = _connected(mask)
    if mask is None:
        return
    dom = SpatialDomain(mask, h)
    back = parse_mask(format_mask(dom))
    assert np.array_equal(back.mask, dom.mask) and back.h == dom.h


def test_mask_orientation():
    # top row of the file is the largest y
    dom = parse_mask("2 3 2 0.5\n#..\n###\n")
    assert dom.mask[0, 1] and not dom.mask[1, 1] and dom.mask[2, 0]
    assert np.array_equal(parse_mask(format_mask(l_domain(1 / 8))).mask, l_domain(1 / 8).mask)
    assert parse_mask("1 4 0.25\n.##.\n").mask.tolist() == [False, True, True, False]


@pytest.mark.parametrize("text", ["", "2 3 0.5\n###\n", "2 3 2 0.5\n###\n", "2 3 1 0.5\n#x#\n",
                                  "2 3 1 h\n###\n", "3 1 1 1 0.5\n#\n"])
def test_mask_errors(text):
    with pytest.raises(FormatError):
        parse_mask(text)


@given(arrays(float, (5, 3), elements=st.floats(-1e6, 1e6)))
def test_grid_function_roundtrip(tmp_path_factory, vals):
    dom = box_domain([(0.0, 1.25)], 0.25)
    u = GridFunction(dom, vals, 1 / 3)
    path = write_grid_function(tmp_path_factory.mktemp("gf") / "u.csv", u)
    back = read_grid_function(path)
    assert np.array_equal(back.values, u.values) and back.tstep == u.tstep


def test_grid_function_roundtrip_2d_with_complement(tmp_path):
    dom = l_domain(1 / 8)
    u = GridFunction.from_function(dom, 1.0, 4, lambda x, y, t: x + 2 * y + t)
    back = read_grid_function(write_grid_function(tmp_path / "u.csv", u))
    assert np.array_equal(back.domain.mask, dom.mask)
    assert np.array_equal(back.values[dom.mask], u.values[dom.mask])


def test_grid_function_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("1 2 2 0.5 0.5 2.0\nix,it,value\n0,0,1.0\n")
    with pytest.raises(FormatError):
        read_grid_function(p)
    p.write_text("1 2 2 0.5 0.5 1.0\nix,iy,it,value\n")
    with pytest.raises(FormatError):
        read_grid_function(p)
    p.write_text("1 2 2 0.5 0.5 1.0\nix,it,value\n0,0,1.0\n")
    with pytest.raises(FormatError):
        read_grid_function(p)


def test_csv_determinism(tmp_path):
    rows = [["a", "b", "c"], [1, 0.1, True], [np.int64(3), np.float64(1 / 3), "x"]]
    text = csv_text(rows)
    assert text == "a,b,c\n1,0.1,1\n3,0.3333333333333333,x\n"
    path = write_csv(tmp_path / "t.csv", rows)
    assert path.read_bytes() == text.encode()
    assert read_csv(path)[2] == ["3", "0.3333333333333333", "x"]


def test_atomic_write_leaves_no_temp(tmp_path):
    p = atomic_write(tmp_path / "sub" / "f.txt", "one\n")
    atomic_write(p, "two\n")
    assert p.read_text() == "two\n"
    assert os.listdir(p.parent) == ["f.txt"]


def test_distance_rows():
    dom = box_domain([(0.0, 1.0)], 0.25)
    rows = distance_rows(distance_to_boundary(dom))
    assert rows[0] == ["ix", "d", "k"] and len(rows) == 5
    assert rows[1][:2] == [0, 0.125]


def test_config_numbers_and_errors(tmp_path):
    assert number("1/64") == 1 / 64 and number(" 0.5 ") == 0.5
    with pytest.raises(ConfigError):
        number("abc")
    cfg = parse_config("[experiment]\nseed = 3\nout = a\n[cylinder]\nT = 1\ndelta = 1/4\n", out="b")
    assert cfg.seed == 3 and str(cfg.out) == "b" and cfg.cylinder.delta == 0.25
    # the output directory does not enter the hash
    assert cfg.digest() == parse_config("[experiment]\nseed = 3\n[cylinder]\nT = 1\ndelta = 1/4\n").digest()
    assert cfg.digest() != parse_config("[experiment]\nseed = 4\n[cylinder]\nT = 1\ndelta = 1/4\n").digest()
    for bad in ("[cylinder]\np = 1\n", "[cylinder]\nT = 1\ndelta = 2\n", "[experiment]\nseed = -1\n",
                "[experiment]\nrefine = 0\n", "[domain]\nshape = file\n", "not an ini",
                "[domain]\nshape = file\nfile = nowhere.mask\n", "[domain]\nshape = star\n"):
        with pytest.raises(ConfigError):
            parse_config(bad).build_domain()
