#!/usr/bin/env python3
"""One-dimensional selection-Gaussian examples.

The pair (r, nu) is bi-Gaussian and identical in every example; only the
selection set changes.  Prints a text histogram of each resulting density
and optionally writes the gridded densities to CSV.
"""

import argparse
from pathlib import Path

import numpy as np
from scipy import integrate, stats

from selkalman.gaussian import GaussianDist, IntervalUnion, SelectionSet
from selkalman.selection import CaseCoupling, ChainConfig, SelectionGaussianParams, sample_selection_gaussian

INF = np.inf
EXAMPLES = {
    "two symmetric segments": ((-INF, -1.0), (1.0, INF)),
    "two asymmetric segments": ((-INF, -1.5), (0.5, INF)),
    "three symmetric segments": ((-INF, -1.5), (-0.3, 0.3), (1.5, INF)),
    "one segment": ((0.5, INF),),
}


def exact_density(x, gamma, segments):
    # f(r) is proportional to phi(r) * P(nu in A | r), nu | r ~ N(gamma r, 1 - gamma^2)
    sd = np.sqrt(1 - gamma**2)
    p = sum(stats.norm.cdf((b - gamma * x) / sd) - stats.norm.cdf((a - gamma * x) / sd) for a, b in segments)
    f = stats.norm.pdf(x) * p
    return f / integrate.trapezoid(f, x)


def bar(v, vmax, width=50):
    return "#" * int(round(width * v / vmax))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--gamma", type=float, default=0.95)
    parser.add_argument("--draws", type=int, default=20000)
    parser.add_argument("--csv", type=Path, help="directory for density CSVs")
    args = parser.parse_args()

    base = GaussianDist([0.0], [[1.0]])
    x = np.linspace(-3.5, 3.5, 701)
    for k, (name, segs) in enumerate(EXAMPLES.items()):
        a = SelectionSet((IntervalUnion(segs),))
        p = SelectionGaussianParams.from_case(base, CaseCoupling(args.gamma), a)
        r = sample_selection_gaussian(p, ChainConfig(args.draws, burn_in=10, thinning=1, seed=k))[:, 0]
        f = exact_density(x, args.gamma, segs)
        hist, edges = np.histogram(r, bins=np.linspace(-3.5, 3.5, 29), density=True)
        print(f"{name}: A = {segs}")
        centres = 0.5 * (edges[1:] + edges[:-1])
        gap = np.max(np.abs(hist - np.interp(centres, x, f)))
        print(f"  sample mean {r.mean():+.3f}  skewness {stats.skew(r):+.3f}  max |hist - exact| {gap:.3f}")
        for h, lo in zip(hist, edges[:-1]):
            print(f"  {lo:+5.2f} {bar(h, hist.max())}")
        print()
        if args.csv:
            args.csv.mkdir(parents=True, exist_ok=True)
            np.savetxt(args.csv / f"example_{k}.csv", np.column_stack([x, f]), delimiter=",",
                       header="r,density", comments="")


if __name__ == "__main__":
    main()
