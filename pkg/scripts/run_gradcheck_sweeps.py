#!/usr/bin/env python3
"""Reproduce the three gradient-validation sweeps on the three-atom scene.

For each of rotation (theta in [0, pi/2]), width (lambda_x in [0.5, 1], i.e.
Lx from 330 to 660 nm), and centroid (yc offset in [-50, 50] nm), compares
the adjoint gradient of the four benchmark costs with best-step central
finite differences and writes one CSV per sweep (plot-ready).

Equivalent to `tezdesign gradcheck --config configs/three_atom.cfg`, with a
panel-density ladder option for convergence studies.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from tezdesign.cli import main as cli_main


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=os.path.join(
        os.path.dirname(__file__), "..", "configs", "three_atom.cfg"))
    ap.add_argument("--out", default="out_gradcheck")
    ap.add_argument("--ppw", type=int, nargs="+", default=[32],
                    help="panel densities to run (one output dir per value)")
    ap.add_argument("--points", type=int, default=8)
    ap.add_argument("--tolerance", type=float, default=1e-3)
    args = ap.parse_args()

    worst_code = 0
    for ppw in args.ppw:
        out = os.path.join(args.out, f"ppw{ppw}")
        code = cli_main([
            "gradcheck", "--config", args.config, "--out", out,
            "--panels-per-wavelength", str(ppw),
            "--points", str(args.points), "--tolerance", str(args.tolerance),
        ])
        print(f"ppw={ppw}: exit {code}; CSVs in {out}")
        worst_code = max(worst_code, code)
    return worst_code


if __name__ == "__main__":
    sys.exit(main())
