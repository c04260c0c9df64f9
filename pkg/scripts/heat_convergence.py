"""Grid convergence of the explicit scheme against the exact solution ``e^{x+t}`` (p = 2)."""

import argparse
import math

import numpy as np

from pbmolab.geometry import box_domain
from pbmolab.pde import BoundaryData, SchemeParams, max_error, solve_model_equation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", type=int, default=4, help="h = 1/16, 1/32, ...")
    ap.add_argument("--dim", type=int, choices=(1, 2), default=1)
    ap.add_argument("--T", type=float, default=0.5)
    args = ap.parse_args()
    prev = None
    print("h,error,order")
    for j in range(args.levels):
        h = 1 / (16 * 2**j)
        dom = box_domain([(0.0, 1.0)] * args.dim, h)
        sol = solve_model_equation(dom, args.T, 2.0, BoundaryData.heat_exp(),
                                   scheme=SchemeParams(tau=h * h / (4 * args.dim), nt_out=32))
        err = max_error(sol, lambda *a: np.exp(a[0] + a[-1]))
        order = math.log2(prev / err) if prev else float("nan")
        print(f"{h!r},{err!r},{order:.3f}")
        prev = err


if __name__ == "__main__":
    main()
