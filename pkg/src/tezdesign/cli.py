"""Command-line entry points: solve | gradcheck | design | oracle.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 validation failure.  The --threads flag caps the BLAS/OpenMP pools and must
take effect before numpy loads, so all heavy imports happen inside main().
"""

from __future__ import annotations

import argparse
import os
import sys

__all__ = ["main"]


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tezdesign",
        description="2D TEz metasurface forward/adjoint solver and design driver",
    )
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS/OpenMP thread pools")
    p.add_argument("--seed", type=int, default=None,
                   help="reserved; all algorithms are deterministic")
    sub = p.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="scene configuration file")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--panels-per-wavelength", type=int, default=None,
                        help="override the configured panel density")

    sub.add_parser("solve", parents=[common],
                   help="forward solve: field maps and boundary/exit-line traces")
    g = sub.add_parser("gradcheck", parents=[common],
                       help="adjoint-vs-FD gradient sweeps")
    g.add_argument("--sweep", choices=["rotation", "width", "centroid", "all"],
                   default="all")
    g.add_argument("--points", type=int, default=8, help="sweep points (>= 8)")
    g.add_argument("--atom", type=int, default=0, help="index of the swept atom")
    g.add_argument("--tolerance", type=float, default=1e-3)
    sub.add_parser("design", parents=[common],
                   help="run the gradient-based design loop")
    o = sub.add_parser("oracle", parents=[common],
                       help="solver-vs-series and reciprocity audits")
    o.add_argument("--tolerance", type=float, default=0.01,
                   help="series-comparison L2 tolerance")
    o.add_argument("--reciprocity-tolerance", type=float, default=1e-6,
                   help="Lorentz-defect tolerance (the defect tracks the "
                        "discretization error, ~1e-4 at 16 panels/wavelength)")
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    from .config import ConfigError
    from .geometry import GeometryError
    from .solver import SolverError

    try:
        cfg = _load(args.config)
        if args.command == "solve":
            return _cmd_solve(cfg, args)
        if args.command == "gradcheck":
            return _cmd_gradcheck(cfg, args)
        if args.command == "design":
            return _cmd_design(cfg, args)
        if args.command == "oracle":
            return _cmd_oracle(cfg, args)
        raise AssertionError(args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SolverError, GeometryError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


def _load(path):
    from .config import parse_config

    return parse_config(path)


def _scene(cfg, args):
    return cfg.scene(panels_per_wavelength=args.panels_per_wavelength)


def _field_map(cfg, scene, solution):
    import numpy as np

    from .fieldio import FieldMap
    from .solver import evaluate_E

    grid = cfg.grid
    if grid is None:
        pts = [p.centroid for _, p in scene.atoms]
        pts += [np.asarray(scene.exit_line.p0), np.asarray(scene.exit_line.p1)]
        pts += [np.asarray(fp) for fp in cfg.focal_points]
        pts = np.array(pts)
        lo = pts.min(axis=0) - scene.lambda0
        hi = pts.max(axis=0) + scene.lambda0
        spacing = scene.lambda0 / 8
        nx = min(512, int(np.ceil((hi[0] - lo[0]) / spacing)) + 1)
        ny = min(512, int(np.ceil((hi[1] - lo[1]) / spacing)) + 1)
        grid = {"origin": (lo[0], lo[1]), "spacing": spacing, "nx": nx, "ny": ny}
    spacing = grid["spacing"]
    fm = FieldMap(
        origin=grid["origin"],
        spacing=(spacing, spacing) if np.isscalar(spacing) else spacing,
        lambda0=scene.lambda0,
        ex=np.zeros((grid["ny"], grid["nx"]), complex),
        ey=np.zeros((grid["ny"], grid["nx"]), complex),
    )
    e = evaluate_E(solution, fm.points())
    fm.ex = e[:, 0].reshape(grid["ny"], grid["nx"])
    fm.ey = e[:, 1].reshape(grid["ny"], grid["nx"])
    return fm


def _write_boundary_csv(path, solution):
    from .fieldio import write_csv
    from .solver import boundary_E

    mesh = solution.system.mesh
    tr = boundary_E(solution)
    header = ["panel", "atom", "x_nm", "y_nm", "h_re_A_per_m", "h_im_A_per_m",
              "q_re_A_per_m2", "q_im_A_per_m2",
              "en_ext_re_V_per_m", "en_ext_im_V_per_m",
              "en_int_re_V_per_m", "en_int_im_V_per_m",
              "et_re_V_per_m", "et_im_V_per_m"]
    rows = [
        [i, int(mesh.atom_index[i]),
         mesh.midpoints[i, 0] / 1e-9, mesh.midpoints[i, 1] / 1e-9,
         solution.h[i].real, solution.h[i].imag,
         solution.dh_dn_ext[i].real, solution.dh_dn_ext[i].imag,
         tr.en_ext[i].real, tr.en_ext[i].imag,
         tr.en_int[i].real, tr.en_int[i].imag,
         tr.et[i].real, tr.et[i].imag]
        for i in range(mesh.n_panels)
    ]
    write_csv(path, header, rows)


def _write_exit_line_csv(path, scene, solution):
    import numpy as np

    from .fieldio import write_csv
    from .solver import evaluate_E

    e = evaluate_E(solution, scene.line_nodes, side="exterior")
    header = ["node", "x_nm", "y_nm", "weight_m",
              "ex_re_V_per_m", "ex_im_V_per_m", "ey_re_V_per_m", "ey_im_V_per_m"]
    rows = [
        [i, scene.line_nodes[i, 0] / 1e-9, scene.line_nodes[i, 1] / 1e-9,
         scene.line_weights[i],
         e[i, 0].real, e[i, 0].imag, e[i, 1].real, e[i, 1].imag]
        for i in range(len(scene.line_nodes))
    ]
    write_csv(path, header, rows)


def _cmd_solve(cfg, args) -> int:
    from .fieldio import write_field_map_binary, write_field_map_csv
    from .solver import assemble, empty_solution, solve

    scene = _scene(cfg, args)
    os.makedirs(args.out, exist_ok=True)
    if scene.atoms:
        solution = solve(assemble(scene.mesh(), scene), scene.incident)
        _write_boundary_csv(os.path.join(args.out, "boundary_traces.csv"), solution)
    else:
        solution = empty_solution(scene)
    fm = _field_map(cfg, scene, solution)
    write_field_map_csv(os.path.join(args.out, "field_map.csv"), fm)
    write_field_map_binary(os.path.join(args.out, "field_map.tezf"), fm)
    _write_exit_line_csv(os.path.join(args.out, "exit_line_field.csv"), scene, solution)
    print(f"solve: wrote field map ({fm.nx}x{fm.ny}) and traces to {args.out}")
    return 0


# the three validation sweeps: parameter name, range, and whether the range
# is an offset from the swept atom's nominal value
SWEEPS = {
    "rotation": ("theta", 0.0, 1.5707963267948966, False),
    "width": ("lambda_x", 0.5, 1.0, False),
    "centroid": ("yc", -50e-9, 50e-9, True),
}


def _cmd_gradcheck(cfg, args) -> int:
    import numpy as np

    from .config import ConfigError
    from .costs import CostSpec, build_target_focus
    from .fieldio import write_csv
    from .verify import gradient_sweep

    scene = _scene(cfg, args)
    os.makedirs(args.out, exist_ok=True)
    if not cfg.focal_points:
        raise ConfigError("gradcheck needs focal_points_nm in [cost]")
    # the standard validation set: the three target costs plus point intensity;
    # the target is RMS-normalized so every cost is well conditioned for FD
    target = build_target_focus(cfg.focal_points, cfg.j0, scene)
    length = float(np.sum(scene.line_weights))
    target = target.with_values(target.values / np.sqrt(target.norm_sq() / length))
    point = cfg.point if cfg.point is not None else np.array(cfg.focal_points[0])
    specs = {
        "I1_scalar_product_mag": CostSpec("scalar_product_mag", target=target),
        "I2_norm_of_difference": CostSpec("norm_of_difference", target=target),
        "I3_squared_norm_diff": CostSpec("squared_norm_diff", target=target),
        "I4_point_intensity": CostSpec("point_intensity", point=point),
    }
    names = [args.sweep] if args.sweep != "all" else list(SWEEPS)
    n_points = max(args.points, 8)
    worst = 0.0
    for name in names:
        param, lo, hi, relative = SWEEPS[name]
        values = np.linspace(lo, hi, n_points)
        if relative:
            from .geometry import PARAM_NAMES

            nominal = scene.atoms[args.atom][1].as_vector()[PARAM_NAMES.index(param)]
            values = values + nominal
        rows = gradient_sweep(scene, specs, param, values, atom=args.atom)
        header = ["sweep", "cost", "param_value", "adjoint_grad", "fd_grad",
                  "fd_step", "relative_error"]
        csv_rows = [
            [name, r.cost_kind, r.param_value, r.adjoint, r.fd, r.fd_step, r.rel_error]
            for r in rows
        ]
        write_csv(os.path.join(args.out, f"gradcheck_{name}.csv"), header, csv_rows)
        sweep_worst = max(r.rel_error for r in rows)
        worst = max(worst, sweep_worst)
        print(f"gradcheck {name}: {len(rows)} rows, worst relative error {sweep_worst:.3e}")
    if worst > args.tolerance:
        print(f"gradcheck: worst error {worst:.3e} exceeds tolerance {args.tolerance:g}",
              file=sys.stderr)
        return 4
    return 0


def _cmd_design(cfg, args) -> int:
    import numpy as np

    from .config import build_cost
    from .fieldio import write_csv, write_field_map_binary, write_field_map_csv
    from .optimize import run_design
    from .solver import assemble, solve

    scene = _scene(cfg, args)
    os.makedirs(args.out, exist_ok=True)
    spec = build_cost(cfg, scene)
    active = cfg.active()

    before = solve(assemble(scene.mesh(), scene), scene.incident)
    fm0 = _field_map(cfg, scene, before)
    write_field_map_csv(os.path.join(args.out, "field_map_before.csv"), fm0)
    write_field_map_binary(os.path.join(args.out, "field_map_before.tezf"), fm0)

    final_scene, trajectory = run_design(scene, spec, active, cfg.optimize)

    labels = active.labels()
    # trajectory.csv is byte-reproducible across reruns; wall-clock timings go
    # to a separate diagnostics file
    header = ["iteration", "cost", "grad_norm", "step_length", "n_line_search",
              "assemblies", "forward_solves", "adjoint_solves"] + labels
    rows = [
        [r.iteration, r.cost, r.grad_norm, r.step_length, r.n_line_search,
         r.solves[0], r.solves[1], r.solves[2]] + list(r.params)
        for r in trajectory
    ]
    write_csv(os.path.join(args.out, "trajectory.csv"), header, rows)
    t_header = ["iteration"] + sorted(trajectory[0].timings)
    t_rows = [[r.iteration] + [r.timings.get(k, 0.0) for k in t_header[1:]]
              for r in trajectory]
    write_csv(os.path.join(args.out, "timings.csv"), t_header, t_rows)

    header = ["atom", "theta_rad", "lambda_x", "lambda_y", "xc_nm", "yc_nm"]
    rows = [
        [i, p.theta, p.lambda_x, p.lambda_y, p.xc / 1e-9, p.yc / 1e-9]
        for i, (_, p) in enumerate(final_scene.atoms)
    ]
    write_csv(os.path.join(args.out, "design_final.csv"), header, rows)

    after = solve(assemble(final_scene.mesh(), final_scene), final_scene.incident)
    fm1 = _field_map(cfg, final_scene, after)
    write_field_map_csv(os.path.join(args.out, "field_map_after.csv"), fm1)
    write_field_map_binary(os.path.join(args.out, "field_map_after.tezf"), fm1)

    print(f"design: {len(trajectory) - 1} iterations, cost "
          f"{trajectory[0].cost:.6e} -> {trajectory[-1].cost:.6e}")
    return 0


def _cmd_oracle(cfg, args) -> int:
    import numpy as np

    from .fieldio import write_csv
    from .geometry import AffineParams, Circle
    from .solver import Dipole, ExitLine, LineCurrent, PlaneWave, Scene, assemble, evaluate_E, solve
    from .verify import cylinder_series_E, reciprocity_audit

    os.makedirs(args.out, exist_ok=True)
    scene_cfg = _scene(cfg, args)
    rows = []
    passed = True

    # series comparison on the canonical dielectric cylinder
    lam0 = scene_cfg.lambda0
    radius, eps_r = 200e-9, 5.76
    errs = {}
    for ppw in (16, 32):
        cyl = Scene(
            lambda0=lam0, atoms=[(Circle(radius), AffineParams())],
            exit_line=ExitLine((30 * lam0, -2 * lam0), (30 * lam0, 2 * lam0), 64),
            eps_r=eps_r, incident=PlaneWave(1.0), panels_per_wavelength=ppw,
        )
        sol = solve(assemble(cyl.mesh(), cyl), cyl.incident)
        phi = np.linspace(0, 2 * np.pi, 120, endpoint=False)
        pts = 5 * lam0 * np.stack([np.cos(phi), np.sin(phi)], axis=1)
        e = evaluate_E(sol, pts)
        e_ref = cylinder_series_E(radius, eps_r, lam0, 1.0, pts)
        errs[ppw] = float(np.linalg.norm(e - e_ref) / np.linalg.norm(e_ref))
    ok = errs[32] < args.tolerance and errs[16] / errs[32] >= 2.0
    passed &= ok
    rows.append(["cylinder_series_l2_32ppw", errs[32], args.tolerance, int(ok)])
    rows.append(["cylinder_series_refinement_ratio", errs[16] / errs[32], 2.0, int(ok)])

    # reciprocity audit on the configured scene
    yhat = np.array([0.0, 1.0])
    span = np.asarray(scene_cfg.exit_line.p1) - np.asarray(scene_cfg.exit_line.p0)
    d1 = Dipole(np.asarray(scene_cfg.exit_line.p0) + 1.5 * span, yhat)
    d2 = Dipole(np.array([-3e-6, 0.4e-6]), np.array([0.6, 0.8]))
    j = np.zeros((len(scene_cfg.line_nodes), 2), dtype=complex)
    j[:, 1] = 1.0
    reports = reciprocity_audit(scene_cfg, [(d1, d2), (d2, LineCurrent(j))],
                                tolerance=args.reciprocity_tolerance)
    for r in reports:
        passed &= r.passed
        rows.append([f"reciprocity_{r.case}", r.value, r.tolerance, int(r.passed)])

    write_csv(os.path.join(args.out, "oracle_report.csv"),
              ["metric", "value", "tolerance", "passed"], rows)
    for row in rows:
        print(f"oracle {row[0]}: value={row[1]:.3e} tol={row[2]:g} "
              f"{'pass' if row[3] else 'FAIL'}")
    return 0 if passed else 4


if __name__ == "__main__":
    sys.exit(main())
