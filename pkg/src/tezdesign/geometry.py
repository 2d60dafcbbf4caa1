"""Meta-atom cross sections, affine maps, panel meshes, and gradient weights.

Conventions used throughout the package:

* Base shapes live in a local frame with the centroid at the origin.
* The affine map applied to a base point is  x' = R(theta) diag(lx, ly) x + c,
  with R the counterclockwise rotation matrix.  Scaling acts in the atom's
  local frame before the rotation.
* Panel loops are stored counterclockwise; normals point outward (into air);
  tangent = z_hat x normal.
* The rotation weight carries a sign flip so it can be summed over the
  counterclockwise loop directly: for a rotation of the atom about its
  centroid the boundary velocity is z_hat x r, whose flux factor is
  (z_hat x r) . n = -(r . t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GeometryError",
    "Circle",
    "RoundedRectangle",
    "Polygon",
    "BaseShape",
    "AffineParams",
    "Panel",
    "BoundaryMesh",
    "rotation_matrix",
    "shape_perimeter",
    "polygon_centroid",
    "build_boundary",
    "build_mesh",
    "weight_rotation",
    "weight_expansion",
    "weight_translation",
]


class GeometryError(ValueError):
    """Degenerate or inconsistent geometric input."""


@dataclass(frozen=True)
class Circle:
    """Circular cross section of the given radius (meters)."""

    radius: float

    def validate(self) -> None:
        if not self.radius > 0.0:
            raise GeometryError(f"circle radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class RoundedRectangle:
    """Rectangle of width lx and height ly with corners replaced by arcs.

    Each corner arc has radius `corner_radius` and is tangent to the two
    adjacent straight edges, so position and tangent are continuous at the
    junctions.  Requires 0 < corner_radius <= min(lx, ly)/2; at equality the
    short straight edges degenerate to points (stadium-like shape).
    """

    lx: float
    ly: float
    corner_radius: float

    def validate(self) -> None:
        if not (self.lx > 0.0 and self.ly > 0.0):
            raise GeometryError("rounded rectangle needs positive side lengths")
        if not (0.0 < self.corner_radius <= 0.5 * min(self.lx, self.ly) + 1e-15 * self.lx):
            raise GeometryError(
                "corner radius must satisfy 0 < R <= min(Lx, Ly)/2, got "
                f"R={self.corner_radius}, Lx={self.lx}, Ly={self.ly}"
            )


@dataclass(frozen=True)
class Polygon:
    """Simple polygon given by its vertices (meters), centroid at the origin."""

    vertices: tuple[tuple[float, float], ...]

    def validate(self) -> None:
        if len(self.vertices) < 3:
            raise GeometryError("polygon needs at least 3 vertices")
        pts = np.asarray(self.vertices, dtype=float)
        area = _signed_area(pts)
        scale = float(np.max(np.abs(pts))) or 1.0
        if abs(area) < 1e-12 * scale**2:
            raise GeometryError("polygon has (near-)zero area")
        centroid, _ = polygon_centroid(pts)
        if np.max(np.abs(centroid)) > 1e-9 * scale:
            raise GeometryError(
                "polygon centroid must sit at the local origin; re-center the vertices"
            )


BaseShape = Circle | RoundedRectangle | Polygon


@dataclass(frozen=True)
class AffineParams:
    """Per-atom affine parameters [theta, lambda_x, lambda_y, xc, yc]."""

    theta: float = 0.0
    lambda_x: float = 1.0
    lambda_y: float = 1.0
    xc: float = 0.0
    yc: float = 0.0

    def __post_init__(self) -> None:
        if not (self.lambda_x > 0.0 and self.lambda_y > 0.0):
            raise GeometryError("scale factors must be strictly positive")

    @property
    def centroid(self) -> np.ndarray:
        return np.array([self.xc, self.yc])

    @property
    def matrix(self) -> np.ndarray:
        """Linear part R(theta) diag(lambda_x, lambda_y)."""
        return rotation_matrix(self.theta) @ np.diag([self.lambda_x, self.lambda_y])

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.matrix.T + self.centroid

    def as_vector(self) -> np.ndarray:
        return np.array([self.theta, self.lambda_x, self.lambda_y, self.xc, self.yc])

    @classmethod
    def from_vector(cls, v) -> "AffineParams":
        return cls(theta=float(v[0]), lambda_x=float(v[1]), lambda_y=float(v[2]),
                   xc=float(v[3]), yc=float(v[4]))


PARAM_NAMES = ("theta", "lambda_x", "lambda_y", "xc", "yc")


def rotation_matrix(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Panel:
    """One flat boundary element of a meta-atom loop."""

    start: np.ndarray
    end: np.ndarray
    midpoint: np.ndarray
    length: float
    normal: np.ndarray
    tangent: np.ndarray
    atom_index: int
    r_centroid: np.ndarray


@dataclass(frozen=True)
class BoundaryMesh:
    """Oriented panel discretization of every meta-atom boundary.

    Panels of each atom form one closed counterclockwise loop and occupy a
    contiguous index range given by `atom_slices`.  `r_centroid` is the panel
    midpoint relative to the owning atom's (transformed) centroid computed by
    the polygon centroid formula of the panel endpoints.
    """

    starts: np.ndarray
    ends: np.ndarray
    midpoints: np.ndarray
    lengths: np.ndarray
    normals: np.ndarray
    tangents: np.ndarray
    atom_index: np.ndarray
    r_centroid: np.ndarray
    atom_slices: tuple[slice, ...]
    centroids: np.ndarray
    panels_per_wavelength: int

    @property
    def n_panels(self) -> int:
        return len(self.lengths)

    @property
    def n_atoms(self) -> int:
        return len(self.atom_slices)

    def perimeter(self, atom: int) -> float:
        return float(np.sum(self.lengths[self.atom_slices[atom]]))

    def panel(self, i: int) -> Panel:
        return Panel(
            start=self.starts[i],
            end=self.ends[i],
            midpoint=self.midpoints[i],
            length=float(self.lengths[i]),
            normal=self.normals[i],
            tangent=self.tangents[i],
            atom_index=int(self.atom_index[i]),
            r_centroid=self.r_centroid[i],
        )


# ---------------------------------------------------------------------------
# Boundary sampling


def _signed_area(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return 0.5 * float(np.sum(x * yn - xn * y))


def polygon_centroid(pts: np.ndarray) -> tuple[np.ndarray, float]:
    """Centroid and signed area of the polygon with vertices `pts` (closed implicitly)."""
    x, y = pts[:, 0], pts[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * float(np.sum(cross))
    if area == 0.0:
        raise GeometryError("zero-area polygon has no centroid")
    cx = float(np.sum((x + xn) * cross)) / (6.0 * area)
    cy = float(np.sum((y + yn) * cross)) / (6.0 * area)
    return np.array([cx, cy]), area


class _Line:
    def __init__(self, p0, p1):
        self.p0 = np.asarray(p0, dtype=float)
        self.p1 = np.asarray(p1, dtype=float)
        self.length = float(np.linalg.norm(self.p1 - self.p0))
        self.min_panels = 1

    def points(self, n: int) -> np.ndarray:
        t = np.arange(n) / n
        return self.p0 + t[:, None] * (self.p1 - self.p0)


class _Arc:
    def __init__(self, center, radius, phi0, phi1, min_panels=2):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.phi0 = float(phi0)
        self.phi1 = float(phi1)
        self.length = abs(phi1 - phi0) * radius
        self.min_panels = min_panels

    def points(self, n: int) -> np.ndarray:
        phi = self.phi0 + (self.phi1 - self.phi0) * np.arange(n) / n
        return self.center + self.radius * np.stack([np.cos(phi), np.sin(phi)], axis=1)


def _segments(shape: BaseShape) -> list:
    """Counterclockwise segment decomposition of a base shape."""
    shape.validate()
    if isinstance(shape, Circle):
        return [_Arc((0.0, 0.0), shape.radius, 0.0, 2.0 * math.pi, min_panels=12)]
    if isinstance(shape, RoundedRectangle):
        hx, hy, r = 0.5 * shape.lx, 0.5 * shape.ly, shape.corner_radius
        ex, ey = hx - r, hy - r  # corner-arc center offsets
        segs = []
        if ey > 0.0:
            segs.append(_Line((hx, -ey), (hx, ey)))
        segs.append(_Arc((ex, ey), r, 0.0, 0.5 * math.pi))
        if ex > 0.0:
            segs.append(_Line((ex, hy), (-ex, hy)))
        segs.append(_Arc((-ex, ey), r, 0.5 * math.pi, math.pi))
        if ey > 0.0:
            segs.append(_Line((-hx, ey), (-hx, -ey)))
        segs.append(_Arc((-ex, -ey), r, math.pi, 1.5 * math.pi))
        if ex > 0.0:
            segs.append(_Line((-ex, -hy), (ex, -hy)))
        segs.append(_Arc((ex, -ey), r, 1.5 * math.pi, 2.0 * math.pi))
        return segs
    if isinstance(shape, Polygon):
        pts = np.asarray(shape.vertices, dtype=float)
        if _signed_area(pts) < 0.0:
            pts = pts[::-1]
        return [_Line(pts[i], pts[(i + 1) % len(pts)]) for i in range(len(pts))]
    raise GeometryError(f"unknown shape {shape!r}")


def shape_perimeter(shape: BaseShape) -> float:
    """Exact perimeter of the base shape's boundary curve."""
    return sum(seg.length for seg in _segments(shape))


def build_boundary(
    shape: BaseShape,
    params: AffineParams,
    panels_per_wavelength: int,
    wavelength: float,
) -> BoundaryMesh:
    """Discretize one transformed meta-atom boundary into a panel loop.

    `wavelength` is the in-medium wavelength of the dielectric; the panel
    length bound lambda_medium / panels_per_wavelength is guaranteed after the
    affine map (segment subdivision counts use the conservative scale factor
    max(lambda_x, lambda_y)).
    """
    if panels_per_wavelength < 6:
        raise GeometryError("panels_per_wavelength must be at least 6")
    if not wavelength > 0.0:
        raise GeometryError("wavelength must be positive")
    target = wavelength / panels_per_wavelength
    scale = max(params.lambda_x, params.lambda_y)
    nodes = []
    for seg in _segments(shape):
        n = max(seg.min_panels, math.ceil(seg.length * scale / target))
        nodes.append(seg.points(n))
    base = np.concatenate(nodes, axis=0)
    pts = params.apply(base)
    return _mesh_from_loops([pts], panels_per_wavelength)


def build_mesh(
    atoms: list[tuple[BaseShape, AffineParams]],
    panels_per_wavelength: int,
    lambda0: float,
    eps_r,
) -> BoundaryMesh:
    """Discretize all atoms of a scene into one mesh (in-medium panel sizing)."""
    eps_r = np.broadcast_to(np.asarray(eps_r, dtype=float), (len(atoms),))
    loops = []
    for (shape, params), er in zip(atoms, eps_r):
        lam_med = lambda0 / math.sqrt(er)
        frag = build_boundary(shape, params, panels_per_wavelength, lam_med)
        loops.append(frag.starts)
    return _mesh_from_loops(loops, panels_per_wavelength)


def _mesh_from_loops(loops: list[np.ndarray], panels_per_wavelength: int) -> BoundaryMesh:
    if not loops:
        z2 = np.zeros((0, 2))
        return BoundaryMesh(
            starts=z2, ends=z2, midpoints=z2, lengths=np.zeros(0), normals=z2,
            tangents=z2, atom_index=np.zeros(0, dtype=int), r_centroid=z2,
            atom_slices=(), centroids=np.zeros((0, 2)),
            panels_per_wavelength=panels_per_wavelength,
        )
    starts = np.concatenate(loops, axis=0)
    ends = np.concatenate([np.roll(loop, -1, axis=0) for loop in loops], axis=0)
    edges = ends - starts
    lengths = np.linalg.norm(edges, axis=1)
    if np.any(lengths <= 0.0):
        raise GeometryError("degenerate (zero-length) panel produced")
    tangents = edges / lengths[:, None]
    # outward normal of a counterclockwise loop: rotate tangent by -90 degrees
    normals = np.stack([tangents[:, 1], -tangents[:, 0]], axis=1)
    midpoints = 0.5 * (starts + ends)

    slices = []
    atom_index = np.empty(len(starts), dtype=int)
    centroids = np.empty((len(loops), 2))
    r_centroid = np.empty_like(midpoints)
    offset = 0
    for a, loop in enumerate(loops):
        sl = slice(offset, offset + len(loop))
        centroid, area = polygon_centroid(loop)
        if area <= 0.0:
            raise GeometryError(f"atom {a}: boundary loop is not counterclockwise")
        slices.append(sl)
        atom_index[sl] = a
        centroids[a] = centroid
        r_centroid[sl] = midpoints[sl] - centroid
        offset += len(loop)

    return BoundaryMesh(
        starts=starts,
        ends=ends,
        midpoints=midpoints,
        lengths=lengths,
        normals=normals,
        tangents=tangents,
        atom_index=atom_index,
        r_centroid=r_centroid,
        atom_slices=tuple(slices),
        centroids=centroids,
        panels_per_wavelength=panels_per_wavelength,
    )


# ---------------------------------------------------------------------------
# Geometric gradient weights
#
# Each weight is the flux factor v . n of the boundary velocity field v of the
# corresponding one-parameter transformation, evaluated per panel, ready to be
# summed over the counterclockwise loop as sum(f * w * length).


def weight_rotation(r_centroid, tangent):
    """Rotation about the atom centroid: w = -(r . t) on the CCW loop."""
    r_centroid = np.asarray(r_centroid, dtype=float)
    tangent = np.asarray(tangent, dtype=float)
    return -np.sum(r_centroid * tangent, axis=-1)


def weight_expansion(r_centroid, normal, d_hat):
    """Unit-rate expansion along d_hat: w = (r . d)(d . n)."""
    r_centroid = np.asarray(r_centroid, dtype=float)
    normal = np.asarray(normal, dtype=float)
    d_hat = np.asarray(d_hat, dtype=float)
    return np.sum(r_centroid * d_hat, axis=-1) * np.sum(normal * d_hat, axis=-1)


def weight_translation(normal, d_hat):
    """Rigid translation along d_hat: w = d . n."""
    normal = np.asarray(normal, dtype=float)
    d_hat = np.asarray(d_hat, dtype=float)
    return np.sum(normal * d_hat, axis=-1)
