import json
import subprocess
import sys

import numpy as np
import pytest

from pbmolab import __version__
from pbmolab.cli import main
from pbmolab.formats import read_csv, write_grid_function
from pbmolab.geometry import box_domain
from pbmolab.oscillation import GridFunction

BASE = """\
[experiment]
seed = 1
all = pbmo,verify-super

[domain]
shape = box
bounds = 0,1
h = 1/32

[cylinder]
T = 1
delta = 1/8
sigma = 1
p = 2

[field]
source = {source}
nt = 64

[pbmo]
sigmas = 1,2
levels = 3
n_random = 4

[verify-super]
count = 6
"""


def _config(tmp_path, source="constant:1.0", extra=""):
    path = tmp_path / "exp.ini"
    path.write_text(BASE.format(source=source) + extra)
    return path


def _field_file(tmp_path, slope):
    dom = box_domain([(0.0, 1.0)], 1 / 32)
    u = GridFunction.from_function(dom, 1.0, 64, lambda x, t: 2.0 + slope * t + 0.0 * x)
    return write_grid_function(tmp_path / "field.csv", u).name


def test_success_and_manifest(tmp_path):
    cfg = _config(tmp_path)
    out = tmp_path / "out"
    assert main(["pbmo", "--config", str(cfg), "--out", str(out), "-q"]) == 0
    rows = read_csv(out / "seminorm.csv")
    assert float(rows[1][rows[0].index("value")]) == 0.0
    man = json.loads((out / "manifest.json").read_text())
    assert man["version"] == __version__ and man["seed"] == 1 and man["refine"] == 1
    assert man["operations"]["pbmo"]["status"] == "ok"
    assert "seminorm.csv" in man["operations"]["pbmo"]["files"]
    assert (out / "config.ini").exists()
    # a second op with the same config is merged into the manifest
    assert main(["verify-super", "--config", str(cfg), "--out", str(out), "-q"]) == 0
    man2 = json.loads((out / "manifest.json").read_text())
    assert set(man2["operations"]) == {"pbmo", "verify-super"}
    assert man2["config_hash"] == man["config_hash"]
    # a changed seed starts a fresh manifest
    assert main(["pbmo", "--config", str(cfg), "--out", str(out), "--seed", "2", "-q"]) == 0
    man3 = json.loads((out / "manifest.json").read_text())
    assert set(man3["operations"]) == {"pbmo"} and man3["seed"] == 2


def test_verification_failure_exit_1(tmp_path):
    name = _field_file(tmp_path, -1.0)
    cfg = _config(tmp_path, f"file:{name}")
    out = tmp_path / "out"
    assert main(["verify-super", "--config", str(cfg), "--out", str(out), "-q"]) == 1
    summary = read_csv(out / "weak_form_summary.csv")
    assert summary[1][0] == "0"
    man = json.loads((out / "manifest.json").read_text())
    assert man["operations"]["verify-super"]["status"] == "fail"


def test_increasing_field_passes(tmp_path):
    name = _field_file(tmp_path, 1.0)
    cfg = _config(tmp_path, f"file:{name}")
    assert main(["verify-super", "--config", str(cfg), "--out", str(tmp_path / "o"), "-q"]) == 0


@pytest.mark.parametrize("extra, argv_extra", [
    ("", ["--refine", "0"]),
    ("", ["--seed", "-3"]),
    ("[cylinder]\n", []),
])
def test_input_errors_exit_2(tmp_path, extra, argv_extra):
    cfg = _config(tmp_path, extra=extra)
    assert main(["pbmo", "--config", str(cfg), "--out", str(tmp_path / "o"), "-q", *argv_extra]) == 2


def test_missing_files_exit_2(tmp_path):
    assert main(["pbmo", "--config", str(tmp_path / "none.ini"), "-q"]) == 2
    cfg = _config(tmp_path, "file:missing.csv")
    assert main(["pbmo", "--config", str(cfg), "--out", str(tmp_path / "o"), "-q"]) == 2


def test_chain_without_start_times_exit_2(tmp_path):
    cfg = _config(tmp_path, extra="[chain]\ndelta = 100\n")
    assert main(["chain", "--config", str(cfg), "--out", str(tmp_path / "o"), "-q"]) == 2


def test_unknown_subcommand():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate", "--config", "x.ini"])
    assert exc.value.code == 2


def test_all_is_deterministic(tmp_path):
    cfg = _config(tmp_path, "log_distance")
    outs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        r = subprocess.run([sys.executable, "-m", "pbmolab", "all", "--config", str(cfg), "--out", str(out), "-q"],
                           capture_output=True, text=True)
        assert r.returncode in (0, 1), r.stderr
        outs.append(out)
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*.csv"))
    assert files
    for f in files:
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    assert np.all([b"\r\n" not in (outs[0] / f).read_bytes() for f in files])
