#!/usr/bin/env python3
"""Print MMAP values and 0.8 HDI bands along the profile row of a finished run."""

import argparse
from pathlib import Path

from selkalman import experiment as ex


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("out", type=Path, help="run directory (contains manifest.json)")
    parser.add_argument("--model", default="skm", choices=ex.MODELS)
    parser.add_argument("--horizon", type=int, default=50)
    args = parser.parse_args()

    cfg = ex.parse_config((args.out / "config.yaml").read_text())
    run = args.out / args.model / f"T{args.horizon:03d}"
    _, pred = ex.read_field(run / "mmap.csv")
    _, truth = ex.read_field(args.out / "truth" / "truth_t000.csv")
    row = cfg.summary.profile_row
    lines = (run / "hdi.csv").read_text().splitlines()[2:]
    bands = {}
    for ln in lines:
        node, i, j, _, covered, k, segs = ln.split(",")
        if int(j) == row:
            bands[int(i)] = (float(covered), segs.replace(";", " U "))
    print(f"{args.model} T={args.horizon} profile j={row}")
    print(" i   truth    mmap  covered  band")
    for i in range(cfg.grid.nx):
        node = cfg.grid.index(i, row)
        cov, segs = bands.get(i, (float("nan"), ""))
        pretty = " U ".join(
            "[" + ", ".join(f"{float(v):.1f}" for v in s.split(":")) + "]" for s in segs.split(" U ") if s
        )
        print(f"{i:2d} {truth[node]:7.1f} {pred[node]:7.2f}  {cov:6.3f}  {pretty}")


if __name__ == "__main__":
    main()
