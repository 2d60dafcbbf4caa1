"""Gradient-based design loop: L-BFGS descent with a gradient-free line search.

One design evaluation performs exactly one assembly, one forward solve, and
one adjoint solve per recipe source, all sharing a single factorization.
Line-search trials evaluate the cost only (assembly + forward solve, no
adjoints), so the per-iteration solve budget is
1 forward + (#recipe sources) adjoints + line-search forwards.

Maximization costs are negated internally; trajectory records report the
user-facing sign.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .costs import AdjointRecipe, CostSpec, LineField, adjoint_recipe, evaluate_cost
from .gradient import ActiveParams, full_gradient
from .solver import (
    BoundarySolution,
    LinearSystem,
    OverlapError,
    Scene,
    assemble,
    boundary_E,
    counters,
    evaluate_E,
    solve,
)

__all__ = [
    "OptimizeConfig",
    "IterationRecord",
    "DesignEval",
    "evaluate_design",
    "evaluate_cost_only",
    "run_design",
    "wrap_angle",
]


@dataclass
class OptimizeConfig:
    max_iterations: int = 500
    gradient_tolerance: float = 1e-8  # relative to the initial gradient norm
    step_tolerance: float = 1e-12
    sufficient_decrease: float = 1e-4
    backtrack_factor: float = 0.5
    max_line_search: int = 25
    history: int = 10
    lambda_min: float = 0.3
    lambda_max: float = 2.0
    centroid_halfwidth: float | None = None  # None: pitch/4 around the start

    def __post_init__(self):
        if self.gradient_tolerance <= 0 or self.step_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.lambda_min <= 0 or self.lambda_max < self.lambda_min:
            raise ValueError("invalid lambda bounds")


@dataclass
class IterationRecord:
    iteration: int
    cost: float
    grad_norm: float
    step_length: float
    n_line_search: int
    params: np.ndarray  # active-parameter snapshot (flat)
    timings: dict = field(default_factory=dict)
    solves: tuple[int, int, int] = (0, 0, 0)  # (assemblies, forwards, adjoints)


@dataclass
class DesignEval:
    cost: float
    gradient: np.ndarray | None
    line_field: LineField
    point_value: np.ndarray | None
    recipe: AdjointRecipe | None
    system: LinearSystem
    forward: BoundarySolution
    diagnostics: dict


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.pi - (math.pi - theta) % (2.0 * math.pi)
    return w


def _forward_probe(scene: Scene, spec: CostSpec, keep_matrix: bool = True):
    """Mesh + assemble + forward solve + cost; no adjoint work."""
    t0 = time.perf_counter()
    mesh = scene.mesh()
    t1 = time.perf_counter()
    system = assemble(mesh, scene, keep_matrix=keep_matrix)
    t2 = time.perf_counter()
    fwd = solve(system, scene.incident)
    t3 = time.perf_counter()
    values = evaluate_E(fwd, scene.line_nodes, side="exterior")
    line_field = LineField(scene.line_nodes, scene.line_weights, values)
    point_value = None
    if spec.kind == "point_intensity":
        point_value = evaluate_E(fwd, spec.point[None, :], side="exterior")[0]
        cost = evaluate_cost(spec, point_value)
    else:
        cost = evaluate_cost(spec, line_field)
    t4 = time.perf_counter()
    timings = {
        "mesh_s": t1 - t0,
        "assemble_s": t2 - t1,
        "forward_solve_s": t3 - t2,
        "field_eval_s": t4 - t3,
    }
    return cost, line_field, point_value, system, fwd, timings


def evaluate_design(
    scene: Scene,
    spec: CostSpec,
    active: ActiveParams | None = None,
    keep_matrix: bool = True,
) -> DesignEval:
    """Cost and adjoint gradient of one design, single factorization."""
    if active is None:
        active = ActiveParams.theta_only(len(scene.atoms))
    cost, line_field, point_value, system, fwd, timings = _forward_probe(
        scene, spec, keep_matrix
    )
    t0 = time.perf_counter()
    recipe = adjoint_recipe(spec, point_value if spec.kind == "point_intensity" else line_field)
    adj = [solve(system, s.incident(), adjoint=True, label=f"adjoint-{i}")
           for i, s in enumerate(recipe.sources)]
    t1 = time.perf_counter()
    traces_f = boundary_E(fwd)
    traces_a = [boundary_E(s) for s in adj]
    grad = full_gradient(scene, system.mesh, traces_f, recipe, traces_a, active)
    t2 = time.perf_counter()
    timings["adjoint_solve_s"] = t1 - t0
    timings["gradient_s"] = t2 - t1
    return DesignEval(
        cost=cost,
        gradient=grad,
        line_field=line_field,
        point_value=point_value,
        recipe=recipe,
        system=system,
        forward=fwd,
        diagnostics=timings,
    )


def evaluate_cost_only(scene: Scene, spec: CostSpec) -> float:
    """Cost of one design (used by line searches and finite differences)."""
    cost, *_ = _forward_probe(scene, spec, keep_matrix=False)
    return cost


def _gradient_from_probe(scene, spec, active, line_field, point_value, system, fwd):
    recipe = adjoint_recipe(spec, point_value if spec.kind == "point_intensity" else line_field)
    adj = [solve(system, s.incident(), adjoint=True, label=f"adjoint-{i}")
           for i, s in enumerate(recipe.sources)]
    traces_f = boundary_E(fwd)
    traces_a = [boundary_E(s) for s in adj]
    return full_gradient(scene, system.mesh, traces_f, recipe, traces_a, active), recipe


def _project(x: np.ndarray, active: ActiveParams, config: OptimizeConfig,
             centroid0: np.ndarray) -> np.ndarray:
    """Clip scale and centroid parameters into their boxes (theta unbounded)."""
    x = x.copy()
    for idx, (atom, param) in enumerate(active.entries):
        if param in (1, 2):
            x[idx] = min(config.lambda_max, max(config.lambda_min, x[idx]))
        elif param in (3, 4) and config.centroid_halfwidth is not None:
            c0 = centroid0[atom, param - 3]
            hw = config.centroid_halfwidth
            x[idx] = min(c0 + hw, max(c0 - hw, x[idx]))
    return x


def _wrap_thetas(x: np.ndarray, active: ActiveParams) -> np.ndarray:
    x = x.copy()
    for idx, (_, param) in enumerate(active.entries):
        if param == 0:
            x[idx] = wrap_angle(x[idx])
    return x


def _default_centroid_halfwidth(scene: Scene) -> float | None:
    centroids = np.array([p.centroid for _, p in scene.atoms])
    if len(centroids) < 2:
        return None
    d2 = np.sum((centroids[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d2, np.inf)
    return 0.25 * float(np.sqrt(np.min(d2)))


def run_design(
    scene: Scene,
    spec: CostSpec,
    active: ActiveParams | None = None,
    config: OptimizeConfig | None = None,
) -> tuple[Scene, list[IterationRecord]]:
    """Locally optimal design via limited-memory quasi-Newton descent."""
    if active is None:
        active = ActiveParams.theta_only(len(scene.atoms))
    if config is None:
        config = OptimizeConfig()
    if config.centroid_halfwidth is None and np.any(active.mask[:, 3:]):
        config = OptimizeConfig(**{**config.__dict__,
                                   "centroid_halfwidth": _default_centroid_halfwidth(scene)})
    sign = -1.0 if spec.maximize else 1.0
    params0 = [p for _, p in scene.atoms]
    centroid0 = np.array([p.centroid for p in params0])
    x = active.pack(params0)

    def scene_at(xv: np.ndarray) -> Scene:
        return scene.with_params(active.unpack(xv, params0))

    trajectory: list[IterationRecord] = []
    s_hist: list[np.ndarray] = []
    y_hist: list[np.ndarray] = []

    snap0 = counters.snapshot()
    t_iter = time.perf_counter()
    cur_scene = scene_at(x)
    cost, line_field, point_value, system, fwd, timings = _forward_probe(cur_scene, spec)
    grad, recipe = _gradient_from_probe(cur_scene, spec, active, line_field,
                                        point_value, system, fwd)
    f_signed = sign * cost
    g_signed = sign * grad
    g0_norm = float(np.linalg.norm(g_signed))
    snap1 = counters.snapshot()
    trajectory.append(IterationRecord(
        iteration=0, cost=cost, grad_norm=float(np.linalg.norm(grad)),
        step_length=0.0, n_line_search=0, params=x.copy(),
        timings={**timings, "total_s": time.perf_counter() - t_iter},
        solves=tuple(b - a for a, b in zip(snap0, snap1)),
    ))
    if g0_norm == 0.0:
        return cur_scene, trajectory

    for it in range(1, config.max_iterations + 1):
        t_iter = time.perf_counter()
        snap0 = counters.snapshot()
        d = _lbfgs_direction(g_signed, s_hist, y_hist)
        if float(np.dot(d, g_signed)) >= 0.0:
            d = -g_signed
        gd = float(np.dot(g_signed, d))

        t = 1.0
        accepted = None
        n_ls = 0
        for _ in range(config.max_line_search):
            n_ls += 1
            x_try = _project(x + t * d, active, config, centroid0)
            try:
                trial_scene = scene_at(x_try)
                c_try, lf, pv, sys_try, fwd_try, tm = _forward_probe(trial_scene, spec)
            except OverlapError:
                t *= config.backtrack_factor
                continue
            if sign * c_try <= f_signed + config.sufficient_decrease * t * gd:
                accepted = (x_try, c_try, lf, pv, sys_try, fwd_try, trial_scene, tm)
                break
            t *= config.backtrack_factor
        if accepted is None:
            break  # line-search failure: stationary to within the search budget

        x_new, cost, line_field, point_value, system, fwd, cur_scene, timings = accepted
        step_len = float(np.linalg.norm(x_new - x))
        grad, recipe = _gradient_from_probe(cur_scene, spec, active, line_field,
                                            point_value, system, fwd)
        g_new = sign * grad
        s_vec = x_new - x
        y_vec = g_new - g_signed
        if float(np.dot(s_vec, y_vec)) > 1e-30:
            s_hist.append(s_vec)
            y_hist.append(y_vec)
            if len(s_hist) > config.history:
                s_hist.pop(0)
                y_hist.pop(0)
        x_wrapped = _wrap_thetas(x_new, active)
        if not np.array_equal(x_wrapped, x_new):
            s_hist.clear()
            y_hist.clear()
        x = x_wrapped
        f_signed = sign * cost
        g_signed = g_new
        snap1 = counters.snapshot()
        trajectory.append(IterationRecord(
            iteration=it, cost=cost, grad_norm=float(np.linalg.norm(grad)),
            step_length=step_len, n_line_search=n_ls, params=x.copy(),
            timings={**timings, "total_s": time.perf_counter() - t_iter},
            solves=tuple(b - a for a, b in zip(snap0, snap1)),
        ))
        if float(np.linalg.norm(g_signed)) <= config.gradient_tolerance * g0_norm:
            break
        if step_len <= config.step_tolerance:
            break

    return scene_at(x), trajectory


def _lbfgs_direction(g: np.ndarray, s_hist: list[np.ndarray],
                     y_hist: list[np.ndarray]) -> np.ndarray:
    """Two-loop recursion; identity (scaled) initial Hessian."""
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        rho = 1.0 / float(np.dot(y, s))
        a = rho * float(np.dot(s, q))
        q -= a * y
        alphas.append((a, rho, s, y))
    if y_hist:
        y_last = y_hist[-1]
        s_last = s_hist[-1]
        gamma = float(np.dot(s_last, y_last) / np.dot(y_last, y_last))
        q *= gamma
    for a, rho, s, y in reversed(alphas):
        b = rho * float(np.dot(y, q))
        q += (a - b) * s
    return -q
