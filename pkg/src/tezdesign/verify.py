"""Independent oracles and validation protocols.

The cylindrical-harmonic series here validates the boundary-element solver
and is implemented directly from scipy's Bessel routines (it shares nothing
with the solver beyond the special-function layer).  The finite-difference
gradient probes go through cost-only design evaluations and never touch the
adjoint path they are checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.special

from .costs import CostSpec
from .gradient import ActiveParams
from .optimize import evaluate_cost_only
from .solver import (
    Dipole,
    IncidentSpec,
    LineCurrent,
    OverlapError,
    Scene,
    assemble,
    evaluate_E,
    incident_E,
    solve,
)
from .special import ETA_0, epsilon_0, speed_of_light

__all__ = [
    "OracleReport",
    "cylinder_series_E",
    "cylinder_series_H",
    "cylinder_scattering_width",
    "fd_gradient",
    "fd_relative_error",
    "gradient_sweep",
    "SweepRow",
    "reciprocity_audit",
    "interaction_integral",
]

_MAX_ORDER = 200


@dataclass
class OracleReport:
    case: str
    metric: str
    value: float
    tolerance: float
    passed: bool
    meta: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Dielectric circular cylinder, plane-wave TEz scattering
#
# Incident H_z = (E0/eta0) exp(-j k0 x) = (E0/eta0) sum_n (-j)^n J_n(k0 r) e^{j n phi}.
# Scattered:  (E0/eta0) sum_n (-j)^n a_n H_n^(2)(k0 r) e^{j n phi}
# Interior:   (E0/eta0) sum_n (-j)^n b_n J_n(k1 r) e^{j n phi},  k1 = k0 sqrt(eps_r)
# from continuity of H and (1/eps) dH/dr at r = a.


def _cylinder_coefficients(radius: float, eps_r: float, lambda0: float):
    k0 = 2.0 * math.pi / lambda0
    m = math.sqrt(eps_r)
    alpha = k0 * radius
    orders = []
    a_coeffs = []
    b_coeffs = []
    peak = 0.0
    tail = 0
    for n in range(_MAX_ORDER + 1):
        ja = scipy.special.jv(n, alpha)
        jap = scipy.special.jvp(n, alpha)
        jm = scipy.special.jv(n, m * alpha)
        jmp = scipy.special.jvp(n, m * alpha)
        ha = scipy.special.hankel2(n, alpha)
        hap = scipy.special.h2vp(n, alpha)
        num = ja * jmp - m * jap * jm
        den = m * hap * jm - ha * jmp
        a_n = num / den
        b_n = (ja + a_n * ha) / jm
        if not (np.isfinite(a_n) and np.isfinite(b_n)):
            raise RuntimeError(
                f"cylinder series coefficients overflowed at order {n}"
            )
        orders.append(n)
        a_coeffs.append(a_n)
        b_coeffs.append(b_n)
        peak = max(peak, abs(a_n))
        if abs(a_n) <= 1e-14 * max(peak, 1e-30):
            tail += 1
            if tail >= 3:
                break
        else:
            tail = 0
    else:
        raise RuntimeError(
            f"cylinder series did not converge within order {_MAX_ORDER}"
        )
    return np.array(orders), np.array(a_coeffs), np.array(b_coeffs)


def cylinder_series_H(radius, eps_r, lambda0, amplitude, points) -> np.ndarray:
    """Total H_z of the series solution (exterior and interior points)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    k0 = 2.0 * math.pi / lambda0
    k1 = k0 * math.sqrt(eps_r)
    h0 = amplitude / ETA_0
    orders, a_n, b_n = _cylinder_coefficients(radius, eps_r, lambda0)
    r = np.hypot(points[:, 0], points[:, 1])
    phi = np.arctan2(points[:, 1], points[:, 0])
    inside = r < radius
    out = np.zeros(len(points), dtype=complex)
    out[~inside] = h0 * np.exp(-1j * k0 * points[~inside, 0])
    for n, an, bn in zip(orders, a_n, b_n):
        for sgn in ((1,) if n == 0 else (1, -1)):
            nn = sgn * n
            cn = (-1j) ** nn
            ext = cn * an * scipy.special.hankel2(nn, k0 * r[~inside])
            out[~inside] += h0 * ext * np.exp(1j * nn * phi[~inside])
            itr = cn * bn * scipy.special.jv(nn, k1 * r[inside])
            out[inside] += h0 * itr * np.exp(1j * nn * phi[inside])
    return out


def cylinder_series_E(radius, eps_r, lambda0, amplitude, points) -> np.ndarray:
    """Total E field (n, 2) of the series solution.

    E_r = (1/(j w eps)) (1/r) dH/dphi, E_phi = -(1/(j w eps)) dH/dr, per region.
    The incident part is added in closed form outside the cylinder.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    k0 = 2.0 * math.pi / lambda0
    k1 = k0 * math.sqrt(eps_r)
    omega = k0 * speed_of_light
    h0 = amplitude / ETA_0
    orders, a_n, b_n = _cylinder_coefficients(radius, eps_r, lambda0)
    r = np.hypot(points[:, 0], points[:, 1])
    phi = np.arctan2(points[:, 1], points[:, 0])
    inside = r < radius
    er = np.zeros(len(points), dtype=complex)
    ephi = np.zeros(len(points), dtype=complex)
    for n, an, bn in zip(orders, a_n, b_n):
        for sgn in ((1,) if n == 0 else (1, -1)):
            nn = sgn * n
            cn = (-1j) ** nn
            # exterior scattered part
            re, pe = r[~inside], phi[~inside]
            hv = scipy.special.hankel2(nn, k0 * re)
            hvp = scipy.special.h2vp(nn, k0 * re)
            coeff = 1.0 / (1j * omega * epsilon_0)
            er[~inside] += coeff * (1j * nn / re) * h0 * cn * an * hv * np.exp(1j * nn * pe)
            ephi[~inside] += -coeff * k0 * h0 * cn * an * hvp * np.exp(1j * nn * pe)
            # interior transmitted part
            ri, pi_ = r[inside], phi[inside]
            jvv = scipy.special.jv(nn, k1 * ri)
            jvp_ = scipy.special.jvp(nn, k1 * ri)
            coeff_i = 1.0 / (1j * omega * epsilon_0 * eps_r)
            with np.errstate(divide="ignore", invalid="ignore"):
                radial = np.where(ri > 0, (1j * nn / np.maximum(ri, 1e-300)) * jvv, 0.0)
            er[inside] += coeff_i * h0 * cn * bn * radial * np.exp(1j * nn * pi_)
            ephi[inside] += -coeff_i * k1 * h0 * cn * bn * jvp_ * np.exp(1j * nn * pi_)
    e = np.zeros((len(points), 2), dtype=complex)
    e[:, 0] = er * np.cos(phi) - ephi * np.sin(phi)
    e[:, 1] = er * np.sin(phi) + ephi * np.cos(phi)
    e[~inside, 1] += amplitude * np.exp(-1j * k0 * points[~inside, 0])
    return e


def cylinder_scattering_width(radius, eps_r, lambda0) -> float:
    """2D scattering width: sigma = (4/k0) (|a_0|^2 + 2 sum |a_n|^2)."""
    k0 = 2.0 * math.pi / lambda0
    orders, a_n, _ = _cylinder_coefficients(radius, eps_r, lambda0)
    total = abs(a_n[0]) ** 2 + 2.0 * float(np.sum(np.abs(a_n[1:]) ** 2))
    return 4.0 / k0 * total


# ---------------------------------------------------------------------------
# Finite-difference gradient oracle


def _param_scale(param: int, lambda0: float) -> float:
    # steps are relative to the natural size of each parameter family
    return lambda0 if param >= 3 else 1.0


def fd_gradient(
    scene: Scene,
    spec: CostSpec,
    active: ActiveParams,
    steps=(1e-3, 1e-4, 1e-5),
    reference: np.ndarray | None = None,
):
    """Central-difference gradient with a step sweep and best-step report.

    Each probe is a full independent cost evaluation (mesh + assembly +
    forward solve).  When `reference` (the adjoint gradient) is given, the
    best step per parameter minimizes the deviation from it; otherwise the
    most stable step pair is chosen.  Probes that create overlapping atoms
    shrink the step.
    """
    params0 = [p for _, p in scene.atoms]
    x0 = active.pack(params0)
    estimates = np.empty((len(steps), active.n_active))
    for si, rel in enumerate(steps):
        for idx, (atom, param) in enumerate(active.entries):
            h = rel * _param_scale(param, scene.lambda0)
            estimates[si, idx] = _central_difference(
                scene, spec, active, params0, x0, idx, h
            )
    best = np.empty(active.n_active)
    best_steps = np.empty(active.n_active)
    for idx in range(active.n_active):
        col = estimates[:, idx]
        if reference is not None:
            pick = int(np.argmin(np.abs(col - reference[idx])))
        else:
            gaps = np.abs(np.diff(col))
            pick = int(np.argmin(gaps)) + 1 if len(col) > 1 else 0
        best[idx] = col[pick]
        best_steps[idx] = steps[pick]
    report = {
        "steps": tuple(steps),
        "estimates": estimates,
        "best_steps": best_steps,
        "labels": active.labels(),
    }
    return best, report


def _central_difference(scene, spec, active, params0, x0, idx, h) -> float:
    for _ in range(8):
        try:
            xp = x0.copy()
            xp[idx] += h
            cp = evaluate_cost_only(scene.with_params(active.unpack(xp, params0)), spec)
            xm = x0.copy()
            xm[idx] -= h
            cm = evaluate_cost_only(scene.with_params(active.unpack(xm, params0)), spec)
            return (cp - cm) / (2.0 * h)
        except OverlapError:
            h *= 0.5
    raise OverlapError("finite-difference probe keeps producing overlapping atoms")


def fd_relative_error(adjoint: np.ndarray, fd: np.ndarray) -> np.ndarray:
    """Per-entry relative error; entries with |FD| below 1e-12 x ||FD|| are
    compared absolutely instead (guards exact structural zeros)."""
    floor = 1e-12 * float(np.linalg.norm(fd))
    out = np.empty_like(adjoint, dtype=float)
    for i, (a, f) in enumerate(zip(adjoint, fd)):
        out[i] = abs(a - f) if abs(f) < floor or f == 0.0 else abs(a - f) / abs(f)
    return out


# ---------------------------------------------------------------------------
# Gradient-accuracy sweeps (rotation / width / centroid protocols)


@dataclass
class SweepRow:
    sweep: str
    cost_kind: str
    param_value: float
    adjoint: float
    fd: float
    fd_step: float
    rel_error: float


def gradient_sweep(
    scene: Scene,
    specs: dict[str, CostSpec],
    sweep_param: str,
    values,
    atom: int = 0,
    steps=(1e-3, 1e-4, 1e-5),
) -> list[SweepRow]:
    """Adjoint-vs-FD comparison of d(cost)/d(param) along a parameter sweep.

    For each swept value of `sweep_param` on `atom`, the forward probe
    (assembly + solve) is shared by all cost kinds; finite-difference probes
    likewise evaluate every cost at once.  Relative errors within each
    (sweep, cost) group use the absolute floor rule: entries with
    |FD| < 1e-12 * ||FD over the sweep|| are compared absolutely.
    """
    from .costs import adjoint_recipe, evaluate_cost
    from .gradient import full_gradient
    from .optimize import _forward_probe
    from .solver import boundary_E as _boundary_E

    values = np.asarray(values, dtype=float)
    params0 = [p for _, p in scene.atoms]
    pidx = _param_index(sweep_param)
    scale = _param_scale(pidx, scene.lambda0)
    active = ActiveParams.single(len(scene.atoms), atom, sweep_param)

    adj = {name: np.empty(len(values)) for name in specs}
    fd_all = {name: np.empty((len(steps), len(values))) for name in specs}

    for vi, v in enumerate(values):
        sc = scene.with_params(_set_param(params0, atom, pidx, v))
        cost0, line_field, _, system, fwd, _ = _forward_probe(sc, specs[_any(specs)])
        point_cache: dict[bytes, np.ndarray] = {}
        traces_f = _boundary_E(fwd)
        for name, spec in specs.items():
            ef = _effective_field(spec, line_field, fwd, point_cache)
            recipe = adjoint_recipe(spec, ef)
            traces_a = [
                _boundary_E(solve(system, s.incident(), adjoint=True))
                for s in recipe.sources
            ]
            g = full_gradient(sc, system.mesh, traces_f, recipe, traces_a, active)
            adj[name][vi] = g[0]
        for si, rel in enumerate(steps):
            h = rel * scale
            cp = _all_costs(scene, specs, params0, atom, pidx, v + h)
            cm = _all_costs(scene, specs, params0, atom, pidx, v - h)
            for name in specs:
                fd_all[name][si, vi] = (cp[name] - cm[name]) / (2.0 * h)

    rows: list[SweepRow] = []
    for name in specs:
        picks = np.argmin(np.abs(fd_all[name] - adj[name][None, :]), axis=0)
        fd_best = fd_all[name][picks, np.arange(len(values))]
        errors = fd_relative_error(adj[name], fd_best)
        for vi, v in enumerate(values):
            rows.append(SweepRow(
                sweep=sweep_param, cost_kind=name, param_value=float(v),
                adjoint=float(adj[name][vi]), fd=float(fd_best[vi]),
                fd_step=float(steps[picks[vi]]), rel_error=float(errors[vi]),
            ))
    return rows


def _any(d):
    return next(iter(d))


def _param_index(name: str) -> int:
    from .geometry import PARAM_NAMES

    return PARAM_NAMES.index(name)


def _set_param(params0, atom, pidx, value):
    out = list(params0)
    vec = out[atom].as_vector()
    vec[pidx] = value
    from .geometry import AffineParams

    out[atom] = AffineParams.from_vector(vec)
    return out


def _effective_field(spec, line_field, fwd, cache):
    if spec.kind != "point_intensity":
        return line_field
    key = spec.point.tobytes()
    if key not in cache:
        cache[key] = evaluate_E(fwd, spec.point[None, :], side="exterior")[0]
    return cache[key]


def _all_costs(scene, specs, params0, atom, pidx, value) -> dict[str, float]:
    from .costs import evaluate_cost
    from .optimize import _forward_probe

    sc = scene.with_params(_set_param(params0, atom, pidx, value))
    _, line_field, _, _sys, fwd, _ = _forward_probe(sc, specs[_any(specs)],
                                                    keep_matrix=False)
    cache: dict[bytes, np.ndarray] = {}
    return {
        name: evaluate_cost(spec, _effective_field(spec, line_field, fwd, cache))
        for name, spec in specs.items()
    }


# ---------------------------------------------------------------------------
# Lorentz reciprocity audit


def interaction_integral(source: IncidentSpec, field_at, scene: Scene) -> complex:
    """integral J . E for a source against a field evaluation callable."""
    if isinstance(source, Dipole):
        e = field_at(source.position[None, :])[0]
        return complex(np.sum(source.moment * e))
    if isinstance(source, LineCurrent):
        e = field_at(scene.line_nodes)
        return complex(
            np.sum(scene.line_weights * np.sum(source.values * e, axis=1))
        )
    raise ValueError("reciprocity sources must be dipoles or line currents")


def reciprocity_audit(
    scene: Scene,
    pairs: list[tuple[IncidentSpec, IncidentSpec]],
    tolerance: float = 1e-6,
) -> list[OracleReport]:
    """Check integral J1.E2 == integral J2.E1 through full scatterer solves."""
    reports = []
    if scene.atoms:
        mesh = scene.mesh()
        system = assemble(mesh, scene, keep_matrix=False)
    else:
        system = None
    for i, (j1, j2) in enumerate(pairs):
        if system is None:
            def field_of(src):
                return lambda pts: incident_E(src, pts, scene)
        else:
            def field_of(src):
                sol = solve(system, src)
                return lambda pts: evaluate_E(sol, pts, side="exterior")
        e2 = field_of(j2)
        e1 = field_of(j1)
        lhs = interaction_integral(j1, e2, scene)
        rhs = interaction_integral(j2, e1, scene)
        denom = max(abs(lhs), abs(rhs), 1e-300)
        value = abs(lhs - rhs) / denom
        reports.append(OracleReport(
            case=f"pair-{i}",
            metric="lorentz_reciprocity_relative_defect",
            value=value,
            tolerance=tolerance,
            passed=value < tolerance,
            meta={"lhs": lhs, "rhs": rhs},
        ))
    return reports
