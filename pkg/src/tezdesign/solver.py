"""TEz boundary-element forward and adjoint solver.

Formulation: direct Green's-representation collocation for the scalar
Helmholtz transmission problem.  Unknowns per panel are the H_z trace h
(continuous across the boundary) and the exterior normal derivative
q = dH/dn|_ext; the interior normal derivative is eliminated through the
transmission condition (1/eps) dH/dn continuous, i.e. dH/dn|_int = eps_r q.

With D_k / S_k the double/single layer operators of kernel
g_k(rho) = -(j/4) H0^(2)(k rho) and midpoint collocation, the block system is

    [ I/2 - D_k0        S_k0      ] [h]   [H_inc]
    [ I/2 + D_k1   -eps_r S_k1    ] [q] = [  0  ]

where the first row enforces the exterior representation (kernel k0, all
atoms coupled) and the second row the interior representation of each atom
(kernel k1 = k0 sqrt(eps_r), block diagonal per atom).  Panel
self-interactions use analytic log extraction for the single layer (the
double layer vanishes on flat panels); near interactions use graded adaptive
Gauss quadrature.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np
import scipy.linalg
import scipy.special

from .geometry import AffineParams, BaseShape, BoundaryMesh, build_mesh
from .special import (
    ETA_0,
    MIN_SEPARATION,
    dipole_field_e,
    dipole_field_h,
    epsilon_0,
    green_tensor,
    speed_of_light,
)

__all__ = [
    "SolverError",
    "OverlapError",
    "PlaneWave",
    "LineCurrent",
    "Dipole",
    "IncidentSpec",
    "ExitLine",
    "Scene",
    "LinearSystem",
    "BoundarySolution",
    "BoundaryTraces",
    "counters",
    "reset_counters",
    "line_quadrature",
    "assemble",
    "empty_solution",
    "solve",
    "incident_H",
    "incident_E",
    "evaluate_H",
    "evaluate_E",
    "boundary_E",
    "classify_points",
]


class SolverError(RuntimeError):
    """Numerical failure in assembly or solve."""


class OverlapError(SolverError):
    """Scene geometry violates the pairwise-disjoint atom requirement."""


# ---------------------------------------------------------------------------
# Excitations and scene


@dataclass(frozen=True)
class PlaneWave:
    """Plane wave E(x) = amplitude * exp(-j k0 x) y_hat travelling along +x."""

    amplitude: float = 1.0


@dataclass(frozen=True)
class LineCurrent:
    """Current density samples (A/m^2, complex 2-vectors) on the exit-line nodes."""

    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=complex))
        if self.values.ndim != 2 or self.values.shape[1] != 2:
            raise SolverError("LineCurrent values must have shape (n_nodes, 2)")


@dataclass(frozen=True)
class Dipole:
    """Line-current dipole at `position` with complex 2-vector `moment` (A/m^2)."""

    position: np.ndarray
    moment: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "moment", np.asarray(self.moment, dtype=complex))

    @classmethod
    def from_direction(cls, position, j0: float, direction=(0.0, 1.0)) -> "Dipole":
        d = np.asarray(direction, dtype=float)
        n = np.linalg.norm(d)
        if n == 0.0:
            raise SolverError("dipole direction must be nonzero")
        return cls(position=np.asarray(position, dtype=float), moment=(j0 / n) * d)


IncidentSpec = PlaneWave | LineCurrent | Dipole


@dataclass(frozen=True)
class ExitLine:
    """Exit line segment S with a composite Gauss-Legendre node budget."""

    p0: tuple[float, float]
    p1: tuple[float, float]
    n_nodes: int = 128


def line_quadrature(exit_line: ExitLine, lambda0: float) -> tuple[np.ndarray, np.ndarray]:
    """Composite 8-point Gauss-Legendre rule on S with >= 10 nodes/wavelength."""
    p0 = np.asarray(exit_line.p0, dtype=float)
    p1 = np.asarray(exit_line.p1, dtype=float)
    length = float(np.linalg.norm(p1 - p0))
    if length <= 0.0:
        raise SolverError("exit line has zero length")
    n_segs = max(
        math.ceil(exit_line.n_nodes / 8),
        math.ceil(10.0 * length / lambda0 / 8),
        1,
    )
    gx, gw = _gauss(8)
    edges = np.linspace(0.0, 1.0, n_segs + 1)
    t = (edges[:-1, None] + np.diff(edges)[:, None] * 0.5 * (gx[None, :] + 1.0)).ravel()
    w = (np.diff(edges)[:, None] * 0.5 * gw[None, :]).ravel() * length
    nodes = p0 + t[:, None] * (p1 - p0)
    return nodes, w


@dataclass
class Scene:
    """Immutable description of one design: atoms, excitation, exit line.

    `eps_r` may be a scalar (shared by all atoms) or one value per atom.
    """

    lambda0: float
    atoms: list[tuple[BaseShape, AffineParams]]
    exit_line: ExitLine
    eps_r: float | np.ndarray = 5.76
    incident: IncidentSpec = PlaneWave()
    panels_per_wavelength: int = 16

    def __post_init__(self):
        self.eps_r = np.broadcast_to(
            np.asarray(self.eps_r, dtype=float), (len(self.atoms),)
        ).copy()
        self.line_nodes, self.line_weights = line_quadrature(self.exit_line, self.lambda0)

    @property
    def k0(self) -> float:
        return 2.0 * math.pi / self.lambda0

    @property
    def omega(self) -> float:
        return self.k0 * speed_of_light

    def with_atoms(self, atoms) -> "Scene":
        return replace(self, atoms=list(atoms), eps_r=self.eps_r)

    def with_params(self, params: list[AffineParams]) -> "Scene":
        return self.with_atoms([(s, p) for (s, _), p in zip(self.atoms, params)])

    def mesh(self) -> BoundaryMesh:
        return build_mesh(self.atoms, self.panels_per_wavelength, self.lambda0, self.eps_r)


# ---------------------------------------------------------------------------
# Instrumented counters (cost-of-gradient accounting)


@dataclass
class SolveCounters:
    assemblies: int = 0
    forward_solves: int = 0
    adjoint_solves: int = 0

    def snapshot(self) -> tuple[int, int, int]:
        return (self.assemblies, self.forward_solves, self.adjoint_solves)


counters = SolveCounters()


def reset_counters() -> None:
    counters.assemblies = 0
    counters.forward_solves = 0
    counters.adjoint_solves = 0


# ---------------------------------------------------------------------------
# Quadrature helpers


@lru_cache(maxsize=16)
def _gauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


def _kernel_S(k: float, rho: np.ndarray) -> np.ndarray:
    return -0.25j * scipy.special.hankel2(0, k * rho)


def _kernel_D(k, rho, u, normal):
    # d g / d n(y) with u = x - y: g'(rho) * ((y - x) . n) / rho
    h1 = scipy.special.hankel2(1, k * rho)
    un = u[..., 0] * normal[..., 0] + u[..., 1] * normal[..., 1]
    return 0.25j * k * h1 * (-un) / rho


def _self_single_layer(k: float, length: float) -> complex:
    """Analytic-log-extracted self integral of the single layer on a flat panel."""
    a = 0.5 * length
    gx, gw = _gauss(12)
    s = 0.5 * a * (gx + 1.0)
    ws = 0.5 * a * gw
    # regular part: g(s) + (1/2pi) J0(k s) ln s  (smooth on (0, a])
    reg = _kernel_S(k, s) + (0.5 / math.pi) * scipy.special.j0(k * s) * np.log(s)
    i_reg = complex(np.sum(ws * reg))
    # log moment: -(1/2pi) * integral_0^a J0(k s) ln(s) ds, by series in (k/2)^2
    i_log = 0.0
    term = 1.0
    for m in range(0, 12):
        if m > 0:
            term *= -((0.5 * k) ** 2) / (m * m)
        p = 2 * m + 1
        i_log += term * a**p * (math.log(a) - 1.0 / p) / p
    i_log *= -0.5 / math.pi
    return 2.0 * (i_reg + i_log)


def _point_segment_distance(x: np.ndarray, p0: np.ndarray, p1: np.ndarray) -> float:
    e = p1 - p0
    t = float(np.dot(x - p0, e) / np.dot(e, e))
    t = min(1.0, max(0.0, t))
    return float(np.linalg.norm(x - (p0 + t * e)))


def _adaptive_panel_integrals(
    x: np.ndarray,
    p0: np.ndarray,
    p1: np.ndarray,
    normal: np.ndarray,
    k: float,
    want_grad: bool = False,
):
    """Graded adaptive quadrature of the layer kernels over one panel.

    Returns (S, D) or (S, D, gradS, gradD) integrals as seen from point `x`.
    Sub-segments are split until their length is below half their distance to
    `x`, grading the rule toward the close approach.
    """
    gx, gw = _gauss(8)
    edge = p1 - p0
    length = float(np.linalg.norm(edge))
    S = 0.0 + 0.0j
    D = 0.0 + 0.0j
    gS = np.zeros(2, dtype=complex)
    gD = np.zeros(2, dtype=complex)
    stack = [(0.0, 1.0)]
    while stack:
        a, b = stack.pop()
        seg_len = (b - a) * length
        qa = p0 + a * edge
        qb = p0 + b * edge
        dist = _point_segment_distance(x, qa, qb)
        if seg_len > 0.5 * dist and (b - a) > 2.0**-16:
            m = 0.5 * (a + b)
            stack.append((a, m))
            stack.append((m, b))
            continue
        t = a + (b - a) * 0.5 * (gx + 1.0)
        y = p0 + t[:, None] * edge
        w = 0.5 * (b - a) * length * gw
        u = x - y
        rho = np.hypot(u[:, 0], u[:, 1])
        if np.any(rho < MIN_SEPARATION):
            raise SolverError("adaptive quadrature hit a coincident point")
        h0 = scipy.special.hankel2(0, k * rho)
        h1 = scipy.special.hankel2(1, k * rho)
        S += np.sum(w * (-0.25j) * h0)
        un = u[:, 0] * normal[0] + u[:, 1] * normal[1]
        D += np.sum(w * 0.25j * k * h1 * (-un) / rho)
        if want_grad:
            # grad_x g = g'(rho) u/rho;  g' = (jk/4) H1
            gS += (0.25j * k) * (w * h1 / rho) @ u
            a1 = 0.25j * k * k * h0 - 0.5j * k * h1 / rho
            gD += -(w * a1 * un / (rho * rho)) @ u - 0.25j * k * np.outer(w * h1 / rho, normal).sum(axis=0)
    if want_grad:
        return S, D, gS, gD
    return S, D


# ---------------------------------------------------------------------------
# Bulk layer-potential matrices


def _layer_matrices(
    targets: np.ndarray,
    mesh: BoundaryMesh,
    panel_sel: slice,
    k: float,
    self_targets: np.ndarray | None = None,
    base_order: int = 4,
    near_factor: float = 2.0,
):
    """Single/double layer matrices from panels `panel_sel` to `targets`.

    `self_targets` maps target row -> global panel index when the target IS
    that panel's midpoint (analytic self term, zero double layer).  Near
    interactions (distance below `near_factor` panel lengths) are recomputed
    with graded adaptive quadrature.
    """
    p0 = mesh.starts[panel_sel]
    p1 = mesh.ends[panel_sel]
    normals = mesh.normals[panel_sel]
    lengths = mesh.lengths[panel_sel]
    n_src = len(lengths)
    n_t = len(targets)
    gx, gw = _gauss(base_order)
    t = 0.5 * (gx + 1.0)
    y = p0[:, None, :] + t[None, :, None] * (p1 - p0)[:, None, :]  # (n_src, g, 2)
    wq = 0.5 * gw[None, :] * lengths[:, None]  # (n_src, g)

    S = np.empty((n_t, n_src), dtype=complex)
    D = np.empty((n_t, n_src), dtype=complex)
    near_pairs: list[tuple[int, int]] = []
    max_len = float(np.max(lengths)) if n_src else 0.0
    chunk = max(1, int(2e6 / max(1, n_src * base_order)))
    for lo in range(0, n_t, chunk):
        hi = min(n_t, lo + chunk)
        u = targets[lo:hi, None, None, :] - y[None, :, :, :]
        rho = np.hypot(u[..., 0], u[..., 1])
        rho_safe = np.maximum(rho, MIN_SEPARATION)
        h0 = scipy.special.hankel2(0, k * rho_safe)
        h1 = scipy.special.hankel2(1, k * rho_safe)
        S[lo:hi] = np.sum(wq[None] * (-0.25j) * h0, axis=2)
        un = u[..., 0] * normals[None, :, None, 0] + u[..., 1] * normals[None, :, None, 1]
        D[lo:hi] = np.sum(wq[None] * 0.25j * k * h1 * (-un) / rho_safe, axis=2)
        close = np.min(rho, axis=2) < near_factor * max(max_len, 1e-300) + 0.5 * lengths[None, :]
        for i, j in np.argwhere(close):
            near_pairs.append((lo + int(i), int(j)))

    panel_offset = panel_sel.start or 0
    for i, j in near_pairs:
        if self_targets is not None and self_targets[i] == panel_offset + j:
            S[i, j] = _self_single_layer(k, float(lengths[j]))
            D[i, j] = 0.0
            continue
        dist = _point_segment_distance(targets[i], p0[j], p1[j])
        if dist < near_factor * lengths[j]:
            S[i, j], D[i, j] = _adaptive_panel_integrals(
                targets[i], p0[j], p1[j], normals[j], k
            )
    return S, D


# ---------------------------------------------------------------------------
# Scene feasibility


def check_scene(mesh: BoundaryMesh, scene: Scene, margin_panels: float = 2.0) -> None:
    """Reject overlapping atoms and an exit line crossing an atom."""
    n = mesh.n_atoms
    if n == 0:
        return
    max_len = float(np.max(mesh.lengths))
    margin = margin_panels * max_len
    radii = np.array(
        [np.max(np.linalg.norm(mesh.starts[sl] - mesh.centroids[a], axis=1))
         for a, sl in enumerate(mesh.atom_slices)]
    )
    for a in range(n):
        for b in range(a + 1, n):
            gap = np.linalg.norm(mesh.centroids[a] - mesh.centroids[b]) - radii[a] - radii[b]
            if gap > margin:
                continue
            da = mesh.midpoints[mesh.atom_slices[a]]
            db = mesh.midpoints[mesh.atom_slices[b]]
            d2 = np.min(
                np.sum((da[:, None, :] - db[None, :, :]) ** 2, axis=2)
            )
            if math.sqrt(d2) <= margin:
                raise OverlapError(f"atoms {a} and {b} closer than {margin_panels} panel lengths")
    p0 = np.asarray(scene.exit_line.p0, dtype=float)
    p1 = np.asarray(scene.exit_line.p1, dtype=float)
    for a, sl in enumerate(mesh.atom_slices):
        d = _segment_segment_min_distance(p0, p1, mesh.centroids[a], radii[a])
        if d <= margin:
            raise SolverError(f"exit line passes through or too close to atom {a}")


def _segment_segment_min_distance(p0, p1, center, radius) -> float:
    return _point_segment_distance(center, p0, p1) - radius


# ---------------------------------------------------------------------------
# Assembly / solve


class LinearSystem:
    """Factorized transmission-problem system reusable for many excitations."""

    def __init__(self, mesh: BoundaryMesh, scene: Scene, matrix: np.ndarray, keep_matrix: bool):
        self.mesh = mesh
        self.scene = scene
        self.matrix = matrix if keep_matrix else None
        try:
            self._lu = scipy.linalg.lu_factor(matrix, overwrite_a=not keep_matrix)
        except scipy.linalg.LinAlgError as exc:
            raise SolverError(
                "singular boundary-element system; refine the mesh "
                "(increase panels_per_wavelength)"
            ) from exc
        self.n_solves = 0

    @property
    def n_panels(self) -> int:
        return self.mesh.n_panels

    def solve_raw(self, rhs: np.ndarray) -> np.ndarray:
        x = scipy.linalg.lu_solve(self._lu, rhs)
        self.n_solves += 1
        if not np.all(np.isfinite(x)):
            raise SolverError("non-finite solution; system is numerically singular")
        return x

    def residual(self, x: np.ndarray, rhs: np.ndarray) -> float:
        if self.matrix is None:
            raise SolverError("matrix was not kept; rebuild with keep_matrix=True")
        r = self.matrix @ x - rhs
        return float(np.linalg.norm(r) / max(np.linalg.norm(rhs), 1e-300))


@dataclass
class BoundarySolution:
    """Boundary traces (h, dH/dn|_ext) for one excitation of one system."""

    system: LinearSystem
    h: np.ndarray
    dh_dn_ext: np.ndarray
    incident: IncidentSpec
    excitation: str = "forward"


def empty_solution(scene: Scene) -> BoundarySolution:
    """Solution object for a scene with no atoms (fields reduce to the incident)."""
    mesh = build_mesh([], scene.panels_per_wavelength, scene.lambda0, scene.eps_r)
    system = LinearSystem.__new__(LinearSystem)
    system.mesh = mesh
    system.scene = scene
    system.matrix = np.zeros((0, 0), dtype=complex)
    system._lu = None
    system.n_solves = 0
    z = np.zeros(0, dtype=complex)
    return BoundarySolution(system=system, h=z, dh_dn_ext=z, incident=scene.incident)


def assemble(mesh: BoundaryMesh, scene: Scene, keep_matrix: bool = True) -> LinearSystem:
    """Build and factorize the transmission system for the given mesh."""
    check_scene(mesh, scene)
    P = mesh.n_panels
    k0 = scene.k0
    A = np.zeros((2 * P, 2 * P), dtype=complex)
    self_map = np.arange(P)
    S0, D0 = _layer_matrices(mesh.midpoints, mesh, slice(0, P), k0, self_targets=self_map)
    A[:P, :P] = -D0
    A[:P, :P][np.diag_indices(P)] += 0.5
    A[:P, P:] = S0
    for a, sl in enumerate(mesh.atom_slices):
        k1 = k0 * math.sqrt(scene.eps_r[a])
        S1, D1 = _layer_matrices(
            mesh.midpoints[sl], mesh, sl, k1,
            self_targets=np.arange(sl.start, sl.stop),
        )
        rows = np.arange(P + sl.start, P + sl.stop)
        A[np.ix_(rows, np.arange(sl.start, sl.stop))] = D1
        A[rows, np.arange(sl.start, sl.stop)] += 0.5
        A[np.ix_(rows, np.arange(P + sl.start, P + sl.stop))] = -scene.eps_r[a] * S1
    counters.assemblies += 1
    return LinearSystem(mesh, scene, A, keep_matrix)


def solve(system: LinearSystem, incident: IncidentSpec, adjoint: bool = False,
          label: str | None = None) -> BoundarySolution:
    """Solve the factorized system for one excitation (no re-assembly)."""
    mesh = system.mesh
    P = mesh.n_panels
    rhs = np.concatenate([
        incident_H(incident, mesh.midpoints, system.scene),
        np.zeros(P, dtype=complex),
    ])
    x = system.solve_raw(rhs)
    if adjoint:
        counters.adjoint_solves += 1
    else:
        counters.forward_solves += 1
    tag = label or ("adjoint" if adjoint else "forward")
    return BoundarySolution(system=system, h=x[:P], dh_dn_ext=x[P:], incident=incident,
                            excitation=tag)


# ---------------------------------------------------------------------------
# Incident fields


def incident_H(spec: IncidentSpec, points: np.ndarray, scene: Scene) -> np.ndarray:
    """Free-space H_z of the excitation at `points`."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    k0 = scene.k0
    if isinstance(spec, PlaneWave):
        return (spec.amplitude / ETA_0) * np.exp(-1j * k0 * points[:, 0])
    if isinstance(spec, Dipole):
        return dipole_field_h(points, spec.position, spec.moment, k0)
    if isinstance(spec, LineCurrent):
        nodes, w = scene.line_nodes, scene.line_weights
        u = points[:, None, :] - nodes[None, :, :]
        rho = np.hypot(u[..., 0], u[..., 1])
        wmask = _principal_value_weights(w, rho, scene.lambda0)
        rho = np.maximum(rho, MIN_SEPARATION)
        h1 = scipy.special.hankel2(1, k0 * rho)
        cross = u[..., 0] * spec.values[None, :, 1] - u[..., 1] * spec.values[None, :, 0]
        return np.sum(wmask * 0.25j * k0 * h1 * cross / rho, axis=1)
    raise SolverError(f"unknown incident spec {spec!r}")


def incident_E(spec: IncidentSpec, points: np.ndarray, scene: Scene) -> np.ndarray:
    """Free-space E field (n, 2) of the excitation at `points`."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    k0, omega = scene.k0, scene.omega
    if isinstance(spec, PlaneWave):
        e = np.zeros((len(points), 2), dtype=complex)
        e[:, 1] = spec.amplitude * np.exp(-1j * k0 * points[:, 0])
        return e
    if isinstance(spec, Dipole):
        return dipole_field_e(points, spec.position, spec.moment, k0, omega)
    if isinstance(spec, LineCurrent):
        nodes, w = scene.line_nodes, scene.line_weights
        u = points[:, None, :] - nodes[None, :, :]
        rho = np.hypot(u[..., 0], u[..., 1])
        wmask = _principal_value_weights(w, rho, scene.lambda0)
        # shift masked (zero-weight) observation points off the singularity
        obs = np.broadcast_to(points[:, None, :], u.shape).copy()
        obs[..., 0] += np.where(wmask == 0.0, scene.lambda0, 0.0)
        g = green_tensor(obs, nodes[None, :, :], k0, omega)
        return np.einsum("nq,nqij,qj->ni", wmask, g, spec.values)
    raise SolverError(f"unknown incident spec {spec!r}")


def _principal_value_weights(w: np.ndarray, rho: np.ndarray, lambda0: float) -> np.ndarray:
    """Drop quadrature nodes coincident with the evaluation point (with a warning)."""
    hit = rho < 1e-4 * lambda0
    wmask = np.broadcast_to(w, rho.shape).copy()
    if np.any(hit):
        warnings.warn(
            "line-current field evaluated on its own support; principal value only",
            stacklevel=3,
        )
        wmask[hit] = 0.0
    return wmask


# ---------------------------------------------------------------------------
# Field evaluation


def classify_points(mesh: BoundaryMesh, points: np.ndarray) -> np.ndarray:
    """-1 for exterior points, else the index of the atom containing the point."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.full(len(points), -1, dtype=int)
    for a, sl in enumerate(mesh.atom_slices):
        vx = mesh.starts[sl][:, 0]
        vy = mesh.starts[sl][:, 1]
        wx = mesh.ends[sl][:, 0]
        wy = mesh.ends[sl][:, 1]
        px = points[:, 0][:, None]
        py = points[:, 1][:, None]
        cond = (vy[None, :] > py) != (wy[None, :] > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = vx[None, :] + (py - vy[None, :]) * (wx - vx)[None, :] / (wy - vy)[None, :]
        crossings = np.sum(cond & (px < xi), axis=1)
        out[(crossings % 2 == 1) & (out < 0)] = a
    return out


def _scattered_H_row(sol: BoundarySolution, x: np.ndarray, region: int) -> complex:
    """Scattered/interior H at one point with near-panel graded fallback."""
    mesh = sol.system.mesh
    scene = sol.system.scene
    if region < 0:
        sel = slice(0, mesh.n_panels)
        k = scene.k0
        hvals = sol.h
        qvals = sol.dh_dn_ext
        sign = 1.0
    else:
        sel = mesh.atom_slices[region]
        k = scene.k0 * math.sqrt(scene.eps_r[region])
        hvals = sol.h[sel]
        qvals = scene.eps_r[region] * sol.dh_dn_ext[sel]
        sign = -1.0
    total = 0.0 + 0.0j
    p0 = mesh.starts[sel]
    p1 = mesh.ends[sel]
    nrm = mesh.normals[sel]
    for j in range(len(p0)):
        S, D = _adaptive_panel_integrals(x, p0[j], p1[j], nrm[j], k)
        total += hvals[j] * D - qvals[j] * S
    return sign * total


def evaluate_H(sol: BoundarySolution, points: np.ndarray, side: str = "auto") -> np.ndarray:
    """Total H_z at `points` (incident + scattered outside, transmitted inside)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    mesh = sol.system.mesh
    scene = sol.system.scene
    if mesh.n_panels == 0:
        return incident_H(sol.incident, points, scene)
    region = _regions(mesh, points, side)
    out = np.zeros(len(points), dtype=complex)
    ext = region < 0
    if np.any(ext):
        out[ext] = incident_H(sol.incident, points[ext], scene)
        out[ext] += _layer_eval_H(sol, points[ext], -1)
    for a in range(mesh.n_atoms):
        inside = region == a
        if np.any(inside):
            out[inside] = _layer_eval_H(sol, points[inside], a)
    return out


def evaluate_E(sol: BoundarySolution, points: np.ndarray, side: str = "auto") -> np.ndarray:
    """Total E field (n, 2) at `points`; transmitted field inside the atoms."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    mesh = sol.system.mesh
    scene = sol.system.scene
    if mesh.n_panels == 0:
        return incident_E(sol.incident, points, scene)
    region = _regions(mesh, points, side)
    out = np.zeros((len(points), 2), dtype=complex)
    ext = region < 0
    if np.any(ext):
        out[ext] = incident_E(sol.incident, points[ext], scene)
        out[ext] += _layer_eval_E(sol, points[ext], -1)
    for a in range(mesh.n_atoms):
        inside = region == a
        if np.any(inside):
            out[inside] = _layer_eval_E(sol, points[inside], a)
    return out


def _regions(mesh: BoundaryMesh, points: np.ndarray, side: str) -> np.ndarray:
    if side == "auto":
        return classify_points(mesh, points)
    if side == "exterior":
        return np.full(len(points), -1, dtype=int)
    if side == "interior":
        region = classify_points(mesh, points)
        if np.any(region < 0):
            raise SolverError("interior evaluation requested for exterior points")
        return region
    raise SolverError(f"unknown side {side!r}")


def _layer_eval_H(sol: BoundarySolution, points: np.ndarray, region: int) -> np.ndarray:
    mesh = sol.system.mesh
    scene = sol.system.scene
    if region < 0:
        sel, k = slice(0, mesh.n_panels), scene.k0
        hvals, qvals, sign = sol.h, sol.dh_dn_ext, 1.0
    else:
        sel = mesh.atom_slices[region]
        k = scene.k0 * math.sqrt(scene.eps_r[region])
        hvals = sol.h[sel]
        qvals = scene.eps_r[region] * sol.dh_dn_ext[sel]
        sign = -1.0
    S, D, near = _eval_matrices(mesh, points, sel, k, want_grad=False)
    out = sign * (D @ hvals - S @ qvals)
    for i in near:
        out[i] = _scattered_H_row(sol, points[i], region)
    return out


def _layer_eval_E(sol: BoundarySolution, points: np.ndarray, region: int) -> np.ndarray:
    mesh = sol.system.mesh
    scene = sol.system.scene
    if region < 0:
        sel, k, eps = slice(0, mesh.n_panels), scene.k0, epsilon_0
        hvals, qvals, sign = sol.h, sol.dh_dn_ext, 1.0
    else:
        sel = mesh.atom_slices[region]
        k = scene.k0 * math.sqrt(scene.eps_r[region])
        eps = epsilon_0 * scene.eps_r[region]
        hvals = sol.h[sel]
        qvals = scene.eps_r[region] * sol.dh_dn_ext[sel]
        sign = -1.0
    gS, gD, near = _eval_matrices(mesh, points, sel, k, want_grad=True)
    grad_h = sign * (np.einsum("npc,p->nc", gD, hvals) - np.einsum("npc,p->nc", gS, qvals))
    for i in near:
        grad_h[i] = _grad_H_row(sol, points[i], region, sign, k, sel, hvals, qvals)
    coeff = 1.0 / (1j * scene.omega * eps)
    e = np.empty_like(grad_h)
    e[:, 0] = coeff * grad_h[:, 1]
    e[:, 1] = -coeff * grad_h[:, 0]
    return e


def _grad_H_row(sol, x, region, sign, k, sel, hvals, qvals):
    mesh = sol.system.mesh
    p0 = mesh.starts[sel]
    p1 = mesh.ends[sel]
    nrm = mesh.normals[sel]
    total = np.zeros(2, dtype=complex)
    for j in range(len(p0)):
        _, _, gS, gD = _adaptive_panel_integrals(x, p0[j], p1[j], nrm[j], k, want_grad=True)
        total += hvals[j] * gD - qvals[j] * gS
    return sign * total


def _eval_matrices(mesh, points, sel, k, want_grad):
    """Layer (or layer-gradient) matrices to off-boundary points, flagging near rows."""
    p0 = mesh.starts[sel]
    p1 = mesh.ends[sel]
    normals = mesh.normals[sel]
    lengths = mesh.lengths[sel]
    n_src = len(lengths)
    n_t = len(points)
    gx, gw = _gauss(4)
    t = 0.5 * (gx + 1.0)
    y = p0[:, None, :] + t[None, :, None] * (p1 - p0)[:, None, :]
    wq = 0.5 * gw[None, :] * lengths[:, None]
    max_len = float(np.max(lengths))
    near_rows: set[int] = set()
    if want_grad:
        GS = np.empty((n_t, n_src, 2), dtype=complex)
        GD = np.empty((n_t, n_src, 2), dtype=complex)
    else:
        S = np.empty((n_t, n_src), dtype=complex)
        D = np.empty((n_t, n_src), dtype=complex)
    chunk = max(1, int(2e6 / max(1, n_src * 4)))
    for lo in range(0, n_t, chunk):
        hi = min(n_t, lo + chunk)
        u = points[lo:hi, None, None, :] - y[None, :, :, :]
        rho = np.hypot(u[..., 0], u[..., 1])
        rho = np.maximum(rho, MIN_SEPARATION)
        h0 = scipy.special.hankel2(0, k * rho)
        h1 = scipy.special.hankel2(1, k * rho)
        un = u[..., 0] * normals[None, :, None, 0] + u[..., 1] * normals[None, :, None, 1]
        if want_grad:
            f1 = wq[None] * 0.25j * k * h1 / rho
            GS[lo:hi] = np.sum(f1[..., None] * u, axis=2)
            a1 = 0.25j * k * k * h0 - 0.5j * k * h1 / rho
            GD[lo:hi] = np.sum(
                (-wq[None] * a1 * un / rho**2)[..., None] * u
                - (wq[None] * 0.25j * k * h1 / rho)[..., None] * normals[None, :, None, :],
                axis=2,
            )
        else:
            S[lo:hi] = np.sum(wq[None] * (-0.25j) * h0, axis=2)
            D[lo:hi] = np.sum(wq[None] * 0.25j * k * h1 * (-un) / rho, axis=2)
        close_rows = np.nonzero(np.min(rho, axis=(1, 2)) < 2.0 * max_len + 0.5 * max_len)[0]
        for i in close_rows:
            x = points[lo + i]
            dmin = min(
                _point_segment_distance(x, p0[j], p1[j]) for j in range(n_src)
            )
            if dmin < 2.0 * max_len:
                near_rows.add(lo + int(i))
                if dmin < 0.1 * max_len:
                    warnings.warn(
                        "field evaluation within 0.1 panel length of a boundary; "
                        "using graded quadrature",
                        stacklevel=4,
                    )
    if want_grad:
        return GS, GD, sorted(near_rows)
    return S, D, sorted(near_rows)


# ---------------------------------------------------------------------------
# Boundary traces of E


@dataclass(frozen=True)
class BoundaryTraces:
    """Per-panel E traces: exterior/interior normal components and tangential."""

    en_ext: np.ndarray
    en_int: np.ndarray
    et: np.ndarray


def boundary_E(sol: BoundarySolution) -> BoundaryTraces:
    """E traces from the solved H traces.

    E.n|_ext = (1/(j omega eps0)) dH/dt, E.n|_int = E.n|_ext / eps_r,
    E.t = -(1/(j omega eps0)) dH/dn|_ext (continuous across the boundary).
    The tangential derivative uses 4th-order centered finite differences on
    the periodic panel sequence (Fornberg weights on the midpoint arclengths).
    """
    mesh = sol.system.mesh
    scene = sol.system.scene
    jwe = 1j * scene.omega * epsilon_0
    dt_h = np.empty_like(sol.h)
    for sl in mesh.atom_slices:
        dt_h[sl] = _periodic_derivative(sol.h[sl], mesh.lengths[sl])
    en_ext = dt_h / jwe
    en_int = en_ext / scene.eps_r[mesh.atom_index]
    et = -sol.dh_dn_ext / jwe
    return BoundaryTraces(en_ext=en_ext, en_int=en_int, et=et)


def _periodic_derivative(values: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """First derivative along a closed loop sampled at panel midpoints."""
    n = len(values)
    if n < 5:
        raise SolverError("need at least 5 panels per loop for the 4th-order stencil")
    s = np.cumsum(lengths) - 0.5 * lengths
    perim = float(np.sum(lengths))
    out = np.empty_like(values)
    for i in range(n):
        raw = np.arange(i - 2, i + 3)
        idx = raw % n
        # unwrap midpoint positions around the periodic seam
        pos = s[idx] + perim * (raw // n)
        w = _fd_weights(s[i], pos)
        out[i] = np.dot(w, values[idx])
    return out


def _fd_weights(z: float, x: np.ndarray) -> np.ndarray:
    """Fornberg weights for the first derivative at z given nodes x."""
    n = len(x)
    c = np.zeros((n, 2))
    c1 = 1.0
    c4 = x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, 1)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for s in range(mn, 0, -1):
                    c[i, s] = c1 * (s * c[i - 1, s - 1] - c5 * c[i - 1, s]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for s in range(mn, 0, -1):
                c[j, s] = (c4 * c[j, s] - s * c[j, s - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, 1]
