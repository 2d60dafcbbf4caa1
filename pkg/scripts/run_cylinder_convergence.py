#!/usr/bin/env python3
"""Mesh-convergence study: BEM vs the cylindrical-harmonic series.

Sweeps panels_per_wavelength for the canonical dielectric cylinder
(radius 200 nm, eps_r 5.76, lambda0 660 nm) and writes the exterior/interior
L2 errors plus boundary-trace errors to cylinder_convergence.csv.
"""

import argparse
import os
import sys
import time

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from tezdesign.fieldio import write_csv
from tezdesign.geometry import AffineParams, Circle
from tezdesign.solver import ExitLine, PlaneWave, Scene, assemble, boundary_E, evaluate_E, solve
from tezdesign.verify import cylinder_series_E

NM = 1e-9
LAM0 = 660 * NM
RADIUS = 200 * NM
EPS_R = 5.76


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="out_cylinder")
    ap.add_argument("--ppw", type=int, nargs="+", default=[8, 16, 32, 64, 128])
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    phi = np.linspace(0, 2 * np.pi, 240, endpoint=False)
    pts_out = 5 * LAM0 * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    pts_in = 0.5 * RADIUS * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    ref_out = cylinder_series_E(RADIUS, EPS_R, LAM0, 1.0, pts_out)
    ref_in = cylinder_series_E(RADIUS, EPS_R, LAM0, 1.0, pts_in)

    rows = []
    for ppw in args.ppw:
        scene = Scene(
            lambda0=LAM0, atoms=[(Circle(RADIUS), AffineParams())],
            exit_line=ExitLine((20e-6, -2e-6), (20e-6, 2e-6), 64),
            eps_r=EPS_R, incident=PlaneWave(1.0), panels_per_wavelength=ppw,
        )
        mesh = scene.mesh()
        t0 = time.perf_counter()
        sol = solve(assemble(mesh, scene, keep_matrix=False), scene.incident)
        t_solve = time.perf_counter() - t0
        e_out = evaluate_E(sol, pts_out)
        e_in = evaluate_E(sol, pts_in)
        err_out = np.linalg.norm(e_out - ref_out) / np.linalg.norm(ref_out)
        err_in = np.linalg.norm(e_in - ref_in) / np.linalg.norm(ref_in)
        tr = boundary_E(sol)
        scale = (1 + 1e-9) * RADIUS / np.linalg.norm(mesh.midpoints, axis=1)
        e_b = cylinder_series_E(RADIUS, EPS_R, LAM0, 1.0, mesh.midpoints * scale[:, None])
        en_ref = np.sum(e_b * mesh.normals, axis=1)
        err_trace = np.linalg.norm(tr.en_ext - en_ref) / np.linalg.norm(en_ref)
        rows.append([ppw, mesh.n_panels, err_out, err_in, err_trace, t_solve])
        print(f"ppw={ppw:4d} panels={mesh.n_panels:5d} exterior={err_out:.3e} "
              f"interior={err_in:.3e} trace={err_trace:.3e} ({t_solve:.1f}s)")

    if len(rows) >= 2:
        orders = np.diff(np.log([r[2] for r in rows])) / np.diff(np.log([r[0] for r in rows]))
        print("observed exterior convergence order per refinement step:",
              np.round(-orders, 2))
    write_csv(os.path.join(args.out, "cylinder_convergence.csv"),
              ["ppw", "panels", "exterior_l2", "interior_l2", "trace_l2", "solve_s"],
              rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
