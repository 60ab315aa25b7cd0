"""Measured order of convergence of every method on x^3 - 1 from starts near the roots."""

from __future__ import annotations

import argparse

import numpy as np

from invm_lyap.errors import InsufficientDataError
from invm_lyap.presets import get_example
from invm_lyap.solvers import COC_FLOOR, Method, SolverParams, computational_order, root_errors, run_solver


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--radius", type=float, default=0.01)
    ap.add_argument("--starts", type=int, default=20)
    ap.add_argument("--alpha", type=float, default=3.0)
    ap.add_argument("--beta", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    ex = get_example(1)
    roots = np.array(ex.roots)
    rng = np.random.default_rng(args.seed)
    params = SolverParams(alpha=args.alpha, beta=args.beta, tol=1e-15, max_iters=40)
    for method in Method:
        cocs = []
        for _ in range(args.starts):
            d = rng.normal(size=3) + 1j * rng.normal(size=3)
            x0 = roots + args.radius * d / np.max(np.abs(d))
            tr = run_solver(ex.polynomial, x0, params, method)
            try:
                cocs.append(computational_order(root_errors(tr.iterates, roots), COC_FLOOR))
            except InsufficientDataError:
                pass
        if cocs:
            q = np.percentile(cocs, [0, 50, 100])
            print(f"{method.value:8s} COC min {q[0]:.2f} median {q[1]:.2f} max {q[2]:.2f} ({len(cocs)} starts)")
        else:
            print(f"{method.value:8s} COC not measurable: too few errors above the floor, try a larger --radius")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
