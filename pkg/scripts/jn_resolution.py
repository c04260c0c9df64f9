"""Local John-Nirenberg pass rate for ``-log d`` on the unit disk versus grid size.

Coarse grids leave small fragments with too few distinct values for a tail
fit; this sweep shows how the pass rate depends on h.
"""

import argparse

import numpy as np

from pbmolab.geometry import disk_domain, distance_to_boundary
from pbmolab.johnnirenberg import local_survey
from pbmolab.oscillation import FamilySpec, GridFunction, rectangle_family


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--h", type=float, nargs="+", default=[1 / 64, 1 / 128, 1 / 256])
    ap.add_argument("--nt", type=int, default=16384)
    ap.add_argument("--levels", type=int, default=6)
    ap.add_argument("--min-side-cells", type=int, default=4)
    args = ap.parse_args()
    print("h,total,fitted,vacuous,failed,pass_rate")
    for h in args.h:
        dom = disk_domain(1.0, h)
        d = distance_to_boundary(dom).values
        u = GridFunction.time_independent(dom, 1.0, args.nt, -np.log(np.where(dom.mask, d, 1.0)))
        rects = [R for R in rectangle_family(dom, 1.0, 2.0, FamilySpec(levels=args.levels, n_random=64))
                 if R.fragment * R.L >= args.min_side_cells * h
                 and (R.fragment * R.L) ** 2 / 2 >= args.min_side_cells * u.tstep]
        s = local_survey(u, rects)
        print(f"{h!r},{s.total},{s.fitted},{s.vacuous},{s.failed},{s.pass_rate:.3f}")


if __name__ == "__main__":
    main()
