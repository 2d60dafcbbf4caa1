"""Cost functionals on the exit line and their adjoint-source recipes.

Every implemented cost reduces to the similarity functional
M_w = integral_S conj(w) . E_f dl, and its design gradient is assembled as

    dI/dp = sum_sources coeff * 2 Re{ beta * dM/dp }

where each source carries the excitation J_a = conj(w) to be placed on S
(or a point dipole), its beta, and a real combine coefficient implementing
the quotient rule for the two normalized costs.  The coefficients depend only
on the current forward field, so a recipe is valid for the design it was
built from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .solver import Dipole, IncidentSpec, LineCurrent, Scene
from .special import green_tensor

__all__ = [
    "CostError",
    "LineField",
    "CostSpec",
    "AdjointSource",
    "AdjointRecipe",
    "similarity",
    "evaluate_cost",
    "adjoint_recipe",
    "build_target_focus",
    "first_variation",
    "COST_KINDS",
    "MAXIMIZE_KINDS",
    "TARGET_KINDS",
]

COST_KINDS = (
    "scalar_product_mag",
    "norm_of_difference",
    "angle_between_fields",
    "squared_norm_diff",
    "angle_between_squares",
    "point_intensity",
)

# Costs that measure alignment/intensity and are maximized by the design loop.
MAXIMIZE_KINDS = frozenset(
    {"scalar_product_mag", "angle_between_fields", "angle_between_squares",
     "point_intensity"}
)

# Costs that need a target line field E_d.
TARGET_KINDS = frozenset(COST_KINDS) - {"point_intensity"}

# Quotient costs refuse to divide by a numerically dead forward field.
NORM_GUARD = 1e-30


class CostError(ValueError):
    """Inconsistent cost specification or guarded division."""


@dataclass(frozen=True)
class LineField:
    """Complex E samples on the shared exit-line quadrature."""

    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=complex))
        if self.values.shape != self.nodes.shape or self.nodes.shape[1] != 2:
            raise CostError("LineField values/nodes must both have shape (n, 2)")
        if self.weights.shape != (len(self.nodes),):
            raise CostError("LineField weights must have shape (n,)")

    def with_values(self, values) -> "LineField":
        return LineField(self.nodes, self.weights, values)

    def norm_sq(self) -> float:
        return float(np.sum(self.weights * np.sum(np.abs(self.values) ** 2, axis=1)))

    def point_mag_sq(self) -> np.ndarray:
        return np.sum(np.abs(self.values) ** 2, axis=1)


def _check_shared_nodes(a: LineField, b: LineField) -> None:
    if a.nodes.shape != b.nodes.shape or not np.array_equal(a.nodes, b.nodes):
        raise CostError("line fields are sampled on different exit-line nodes")


def similarity(w: LineField, ef: LineField) -> complex:
    """Quadrature approximation of integral_S conj(w) . E_f dl."""
    _check_shared_nodes(w, ef)
    return complex(np.sum(w.weights * np.sum(np.conj(w.values) * ef.values, axis=1)))


@dataclass(frozen=True)
class CostSpec:
    """Cost selector with its target data.

    `target` is the prescribed line field E_d (all kinds except
    point_intensity); `point` is the observation point x0 of point_intensity.
    """

    kind: str
    target: LineField | None = None
    point: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in COST_KINDS:
            raise CostError(f"unknown cost kind {self.kind!r}")
        if self.kind in TARGET_KINDS and self.target is None:
            raise CostError(f"cost {self.kind!r} requires a target line field")
        if self.kind == "point_intensity":
            if self.point is None:
                raise CostError("point_intensity requires the observation point")
            object.__setattr__(self, "point", np.asarray(self.point, dtype=float))

    @property
    def maximize(self) -> bool:
        return self.kind in MAXIMIZE_KINDS


@dataclass(frozen=True)
class AdjointSource:
    """One adjoint excitation: J_a on S (line) or a point dipole at x0."""

    beta: complex
    coeff: float
    line_values: np.ndarray | None = None
    dipole: Dipole | None = None

    def incident(self) -> IncidentSpec:
        if self.dipole is not None:
            return self.dipole
        return LineCurrent(self.line_values)


@dataclass(frozen=True)
class AdjointRecipe:
    sources: tuple[AdjointSource, ...]
    combine: str  # "single" or "quotient"


def evaluate_cost(spec: CostSpec, ef) -> float:
    """Evaluate the cost for the forward line field (or point value E_f(x0))."""
    if spec.kind == "point_intensity":
        e = np.asarray(ef, dtype=complex)
        return float(np.sum(np.abs(e) ** 2))
    if not isinstance(ef, LineField):
        raise CostError(f"cost {spec.kind!r} expects a LineField")
    ed = spec.target
    _check_shared_nodes(ed, ef)
    if spec.kind == "scalar_product_mag":
        return float(abs(similarity(ed, ef)) ** 2)
    if spec.kind == "norm_of_difference":
        diff = ed.values - ef.values
        return float(np.sum(ed.weights * np.sum(np.abs(diff) ** 2, axis=1)))
    if spec.kind == "angle_between_fields":
        nf2 = ef.norm_sq()
        nd2 = ed.norm_sq()
        _guard(nf2)
        return float(abs(similarity(ed, ef)) ** 2 / (nd2 * nf2))
    if spec.kind == "squared_norm_diff":
        d2 = ed.point_mag_sq()
        f2 = ef.point_mag_sq()
        return float(np.sum(ed.weights * (d2 - f2) ** 2))
    if spec.kind == "angle_between_squares":
        f_, g_, h_ = _squares_integrals(ed, ef)
        _guard(g_)
        _guard(h_)
        return float(f_**2 / (g_ * h_))
    raise CostError(f"unknown cost kind {spec.kind!r}")


def _guard(value: float) -> None:
    if value < NORM_GUARD:
        raise CostError(
            "forward field norm underflow in a quotient cost; "
            "this indicates a failed solve"
        )


def _squares_integrals(ed: LineField, ef: LineField) -> tuple[float, float, float]:
    d2 = ed.point_mag_sq()
    f2 = ef.point_mag_sq()
    w = ed.weights
    return (
        float(np.sum(w * d2 * f2)),
        float(np.sum(w * f2 * f2)),
        float(np.sum(w * d2 * d2)),
    )


def adjoint_recipe(spec: CostSpec, ef) -> AdjointRecipe:
    """Adjoint sources, betas, and combine coefficients for the current design."""
    if spec.kind == "point_intensity":
        e0 = np.asarray(ef, dtype=complex)
        dip = Dipole(position=spec.point, moment=np.conj(e0))
        return AdjointRecipe((AdjointSource(beta=1.0 + 0.0j, coeff=1.0, dipole=dip),),
                             combine="single")
    if not isinstance(ef, LineField):
        raise CostError(f"cost {spec.kind!r} expects a LineField")
    ed = spec.target
    _check_shared_nodes(ed, ef)
    if spec.kind == "scalar_product_mag":
        m = similarity(ed, ef)
        src = AdjointSource(beta=np.conj(m), coeff=1.0, line_values=np.conj(ed.values))
        return AdjointRecipe((src,), combine="single")
    if spec.kind == "norm_of_difference":
        src = AdjointSource(
            beta=1.0 + 0.0j, coeff=1.0,
            line_values=np.conj(ef.values) - np.conj(ed.values),
        )
        return AdjointRecipe((src,), combine="single")
    if spec.kind == "angle_between_fields":
        m = similarity(ed, ef)
        nf2 = ef.norm_sq()
        nd2 = ed.norm_sq()
        _guard(nf2)
        s1 = AdjointSource(beta=np.conj(m), coeff=1.0 / (nd2 * nf2),
                           line_values=np.conj(ed.values))
        s2 = AdjointSource(beta=1.0 + 0.0j, coeff=-abs(m) ** 2 / (nd2 * nf2**2),
                           line_values=np.conj(ef.values))
        return AdjointRecipe((s1, s2), combine="quotient")
    if spec.kind == "squared_norm_diff":
        d2 = ed.point_mag_sq()
        f2 = ef.point_mag_sq()
        src = AdjointSource(
            beta=2.0 + 0.0j, coeff=1.0,
            line_values=(f2 - d2)[:, None] * np.conj(ef.values),
        )
        return AdjointRecipe((src,), combine="single")
    if spec.kind == "angle_between_squares":
        f_, g_, h_ = _squares_integrals(ed, ef)
        _guard(g_)
        _guard(h_)
        d2 = ed.point_mag_sq()
        f2 = ef.point_mag_sq()
        s1 = AdjointSource(beta=1.0 + 0.0j, coeff=2.0 * f_ / (g_ * h_),
                           line_values=d2[:, None] * np.conj(ef.values))
        s2 = AdjointSource(beta=2.0 + 0.0j, coeff=-(f_**2) / (g_**2 * h_),
                           line_values=f2[:, None] * np.conj(ef.values))
        return AdjointRecipe((s1, s2), combine="quotient")
    raise CostError(f"unknown cost kind {spec.kind!r}")


def first_variation(recipe: AdjointRecipe, base: LineField, delta_values,
                    delta_point=None) -> float:
    """First-order cost change for a perturbation of the forward field.

    delta_values perturbs the line samples; delta_point perturbs E_f(x0) for a
    dipole source.  Used to check recipes without any solver involvement:
    dI = sum coeff * 2 Re{ beta * dM } with dM = integral_S J_a . dE dl.
    """
    total = 0.0
    for src in recipe.sources:
        if src.dipole is not None:
            if delta_point is None:
                raise CostError("dipole source needs the point perturbation")
            dm = complex(np.sum(src.dipole.moment * np.asarray(delta_point, dtype=complex)))
        else:
            dv = np.asarray(delta_values, dtype=complex)
            dm = complex(np.sum(base.weights * np.sum(src.line_values * dv, axis=1)))
        total += src.coeff * 2.0 * np.real(src.beta * dm)
    return total


def build_target_focus(points, j0: float, scene: Scene) -> LineField:
    """Time-reversal focusing target: conjugated y-dipole fields summed on S."""
    nodes = scene.line_nodes
    weights = scene.line_weights
    p0 = np.asarray(scene.exit_line.p0, dtype=float)
    p1 = np.asarray(scene.exit_line.p1, dtype=float)
    total = np.zeros((len(nodes), 2), dtype=complex)
    moment = np.array([0.0, j0], dtype=complex)
    for pt in np.atleast_2d(np.asarray(points, dtype=float)):
        if _distance_to_segment(pt, p0, p1) < 1e-9 * scene.lambda0:
            raise CostError(f"focal point {pt} lies on the exit line")
        g = green_tensor(nodes, pt, scene.k0, scene.omega)
        total += g @ moment
    return LineField(nodes=nodes, weights=weights, values=np.conj(total))


def _distance_to_segment(x, p0, p1) -> float:
    e = p1 - p0
    t = float(np.dot(x - p0, e) / np.dot(e, e))
    t = min(1.0, max(0.0, t))
    return float(np.linalg.norm(x - (p0 + t * e)))
