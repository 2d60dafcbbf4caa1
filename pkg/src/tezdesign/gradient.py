"""Assembly of design-cost gradients from forward and adjoint boundary traces.

The derivative of the similarity functional with respect to one geometric
parameter of atom i is the boundary integral

    dM/dp = j omega (eps - eps0) * sum_panels f * w * length

where f combines the E traces of the adjoint and forward solutions through
the dielectric interface condition and w is the purely geometric weight of
the transformation.  Both solutions refer to the same (unperturbed) design
and therefore to one factorized system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    PARAM_NAMES,
    AffineParams,
    BoundaryMesh,
    rotation_matrix,
    weight_expansion,
    weight_rotation,
    weight_translation,
)
from .costs import AdjointRecipe
from .solver import BoundaryTraces, Scene
from .special import epsilon_0

__all__ = [
    "GradientError",
    "ActiveParams",
    "integrand_f",
    "transform_partial",
    "param_partial",
    "full_gradient",
]


class GradientError(ValueError):
    """Mismatched meshes, recipes, or parameter masks."""


@dataclass(frozen=True)
class ActiveParams:
    """Mask over the per-atom parameters [theta, lambda_x, lambda_y, xc, yc]."""

    mask: np.ndarray  # (n_atoms, 5) bool

    def __post_init__(self):
        m = np.asarray(self.mask, dtype=bool)
        if m.ndim != 2 or m.shape[1] != 5:
            raise GradientError("mask must have shape (n_atoms, 5)")
        object.__setattr__(self, "mask", m)

    @classmethod
    def theta_only(cls, n_atoms: int) -> "ActiveParams":
        m = np.zeros((n_atoms, 5), dtype=bool)
        m[:, 0] = True
        return cls(m)

    @classmethod
    def all_params(cls, n_atoms: int) -> "ActiveParams":
        return cls(np.ones((n_atoms, 5), dtype=bool))

    @classmethod
    def from_names(cls, n_atoms: int, names) -> "ActiveParams":
        m = np.zeros((n_atoms, 5), dtype=bool)
        for name in names:
            if name not in PARAM_NAMES:
                raise GradientError(f"unknown parameter name {name!r}")
            m[:, PARAM_NAMES.index(name)] = True
        return cls(m)

    @classmethod
    def single(cls, n_atoms: int, atom: int, name: str) -> "ActiveParams":
        m = np.zeros((n_atoms, 5), dtype=bool)
        m[atom, PARAM_NAMES.index(name)] = True
        return cls(m)

    @property
    def n_active(self) -> int:
        return int(np.sum(self.mask))

    @property
    def entries(self) -> list[tuple[int, int]]:
        """Flat-index order: (atom, param) pairs, atoms outer, params inner."""
        return [(a, p) for a, p in np.argwhere(self.mask)]

    def labels(self) -> list[str]:
        return [f"atom{a:03d}.{PARAM_NAMES[p]}" for a, p in self.entries]

    def pack(self, params: list[AffineParams]) -> np.ndarray:
        vecs = np.array([p.as_vector() for p in params])
        return vecs[self.mask]

    def unpack(self, x: np.ndarray, params: list[AffineParams]) -> list[AffineParams]:
        if len(x) != self.n_active:
            raise GradientError("flat vector length does not match active mask")
        vecs = np.array([p.as_vector() for p in params])
        vecs[self.mask] = x
        return [AffineParams.from_vector(v) for v in vecs]


def integrand_f(traces_a: BoundaryTraces, traces_f: BoundaryTraces, eps_r) -> np.ndarray:
    """Per-panel interface integrand combining adjoint and forward E traces.

    f = (1/eps_r) (Ea.n)_ext (Ef.n)_ext + (Ea.t)(Ef.t); symmetric in the two
    fields, reduces to the plain dot product of the traces when eps_r = 1.
    """
    if traces_a.en_ext.shape != traces_f.en_ext.shape:
        raise GradientError("adjoint/forward traces come from different meshes")
    eps_r = np.asarray(eps_r, dtype=float)
    return (traces_a.en_ext * traces_f.en_ext) / eps_r + traces_a.et * traces_f.et


def transform_partial(
    mesh: BoundaryMesh,
    scene: Scene,
    f: np.ndarray,
    atom: int,
    kind: str,
    d_hat=None,
) -> complex:
    """dM/dalpha for one transformation of one atom at unit parameter rate.

    kind is "rotation", "expansion", or "translation"; the latter two need the
    unit direction d_hat.
    """
    if len(f) != mesh.n_panels:
        raise GradientError("integrand length does not match the mesh")
    sl = mesh.atom_slices[atom]
    if kind == "rotation":
        w = weight_rotation(mesh.r_centroid[sl], mesh.tangents[sl])
    elif kind == "expansion":
        w = weight_expansion(mesh.r_centroid[sl], mesh.normals[sl], d_hat)
    elif kind == "translation":
        w = weight_translation(mesh.normals[sl], d_hat)
    else:
        raise GradientError(f"unknown transform kind {kind!r}")
    pref = 1j * scene.omega * epsilon_0 * (scene.eps_r[atom] - 1.0)
    return complex(pref * np.sum(f[sl] * w * mesh.lengths[sl]))


def param_partial(
    mesh: BoundaryMesh,
    scene: Scene,
    f: np.ndarray,
    atom: int,
    param: int | str,
) -> complex:
    """dM/dp for one affine parameter of one atom.

    The scale parameters act in the atom's local frame: the expansion
    direction is the local axis rotated by the current theta, and the unit
    expansion rate converts to d/d lambda by the chain factor 1/lambda.
    """
    if isinstance(param, str):
        param = PARAM_NAMES.index(param)
    params = scene.atoms[atom][1]
    if param == 0:
        return transform_partial(mesh, scene, f, atom, "rotation")
    if param in (1, 2):
        axis = np.zeros(2)
        axis[param - 1] = 1.0
        d_hat = rotation_matrix(params.theta) @ axis
        lam = params.lambda_x if param == 1 else params.lambda_y
        return transform_partial(mesh, scene, f, atom, "expansion", d_hat) / lam
    if param == 3:
        return transform_partial(mesh, scene, f, atom, "translation", np.array([1.0, 0.0]))
    if param == 4:
        return transform_partial(mesh, scene, f, atom, "translation", np.array([0.0, 1.0]))
    raise GradientError(f"parameter index {param} out of range")


def full_gradient(
    scene: Scene,
    mesh: BoundaryMesh,
    traces_f: BoundaryTraces,
    recipe: AdjointRecipe,
    traces_a: list[BoundaryTraces],
    active: ActiveParams,
) -> np.ndarray:
    """Real gradient over the active parameters, recipe combine rule applied."""
    if len(traces_a) != len(recipe.sources):
        raise GradientError(
            f"recipe has {len(recipe.sources)} sources but {len(traces_a)} adjoint "
            "solutions were supplied"
        )
    if active.mask.shape[0] != mesh.n_atoms:
        raise GradientError("active mask does not match the number of atoms")
    fs = [integrand_f(tr_a, traces_f, scene.eps_r[mesh.atom_index])
          for tr_a in traces_a]
    grad = np.zeros(active.n_active)
    for idx, (atom, param) in enumerate(active.entries):
        total = 0.0
        for src, f in zip(recipe.sources, fs):
            dm = param_partial(mesh, scene, f, atom, param)
            total += src.coeff * 2.0 * float(np.real(src.beta * dm))
        grad[idx] = total
    if not np.all(np.isfinite(grad)):
        raise GradientError("non-finite gradient entry")
    return grad
