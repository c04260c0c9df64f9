"""Run ``pbmolab all`` on every config in ``configs/`` and tabulate the manifests."""

import argparse
import json
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("names", nargs="*", help="config stems (default: all)")
    ap.add_argument("--out", default=str(ROOT / "out"))
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()
    configs = sorted((ROOT / "configs").glob("*.ini"))
    if args.names:
        configs = [c for c in configs if c.stem in args.names]
    worst = 0
    for cfg in configs:
        out = Path(args.out) / cfg.stem
        cmd = [sys.executable, "-m", "pbmolab", "all", "--config", str(cfg), "--out", str(out), "-q"]
        if args.seed is not None:
            cmd += ["--seed", str(args.seed)]
        code = subprocess.run(cmd).returncode
        worst = max(worst, code)
        print(f"== {cfg.stem}: exit {code}")
        man = out / "manifest.json"
        if man.exists():
            for name, op in json.loads(man.read_text())["operations"].items():
                print(f"   {name:<14} {op['status']:<5} {op['seconds']:8.2f}s  {op['summary']}")
    return worst


if __name__ == "__main__":
    sys.exit(main())
