"""Boundary-integral gradient assembly: structural identities, finite-difference
agreement, and the one-factorization accounting."""

import numpy as np
import pytest

from tezdesign.costs import CostSpec, LineField, build_target_focus, similarity
from tezdesign.geometry import AffineParams, Circle, RoundedRectangle
from tezdesign.gradient import (
    ActiveParams,
    GradientError,
    full_gradient,
    integrand_f,
    param_partial,
    transform_partial,
)
from tezdesign.optimize import evaluate_design
from tezdesign.solver import (
    BoundaryTraces,
    ExitLine,
    PlaneWave,
    Scene,
    assemble,
    boundary_E,
    counters,
    evaluate_E,
    solve,
)

NM = 1e-9
LAM0 = 660 * NM
PITCH = 726 * NM


def make_traces(mesh, seed=None, constant=None):
    n = mesh.n_panels
    if constant is not None:
        v = np.full(n, constant, dtype=complex)
        return BoundaryTraces(en_ext=v, en_int=v, et=v)
    rng = np.random.default_rng(seed)
    def rnd():
        return rng.normal(size=n) + 1j * rng.normal(size=n)
    en = rnd()
    return BoundaryTraces(en_ext=en, en_int=en / 5.76, et=rnd())


class TestIntegrandF:
    def test_zero_adjoint_gives_zero(self, three_atom_scene):
        mesh = three_atom_scene.mesh()
        tr_f = make_traces(mesh, seed=0)
        zero = BoundaryTraces(*(np.zeros(mesh.n_panels, dtype=complex),) * 3)
        f = integrand_f(zero, tr_f, 5.76)
        assert np.max(np.abs(f)) == 0.0

    def test_symmetric_in_both_fields(self, three_atom_scene):
        mesh = three_atom_scene.mesh()
        a = make_traces(mesh, seed=1)
        b = make_traces(mesh, seed=2)
        assert np.allclose(integrand_f(a, b, 5.76), integrand_f(b, a, 5.76))

    def test_no_contrast_reduces_to_dot_product(self, three_atom_scene):
        mesh = three_atom_scene.mesh()
        a = make_traces(mesh, seed=3)
        b = make_traces(mesh, seed=4)
        f = integrand_f(a, b, 1.0)
        assert np.allclose(f, a.en_ext * b.en_ext + a.et * b.et)

    def test_mesh_mismatch_rejected(self, three_atom_scene):
        mesh = three_atom_scene.mesh()
        a = make_traces(mesh, seed=5)
        short = BoundaryTraces(a.en_ext[:-1], a.en_int[:-1], a.et[:-1])
        with pytest.raises(GradientError):
            integrand_f(short, a, 5.76)


class TestTransformPartial:
    def test_circle_rotation_partial_vanishes(self):
        scene = Scene(
            lambda0=LAM0, atoms=[(Circle(200 * NM), AffineParams())],
            exit_line=ExitLine((10e-6, -2e-6), (10e-6, 2e-6), 64),
            eps_r=5.76, panels_per_wavelength=16,
        )
        mesh = scene.mesh()
        sol = solve(assemble(mesh, scene), scene.incident)
        tr = boundary_E(sol)
        f = integrand_f(tr, tr, 5.76)
        val = transform_partial(mesh, scene, f, 0, "rotation")
        # scale-free comparison against the translation partial of the same f
        ref = abs(transform_partial(mesh, scene, f, 0, "translation",
                                    d_hat=np.array([1.0, 0.0])))
        assert abs(val) < 1e-12 * max(ref, 1.0)

    def test_constant_integrand_translation_vanishes(self, three_atom_scene):
        scene = three_atom_scene
        mesh = scene.mesh()
        f = np.ones(mesh.n_panels, dtype=complex)
        for d in (np.array([1.0, 0.0]), np.array([0.0, 1.0])):
            val = transform_partial(mesh, scene, f, 1, "translation", d_hat=d)
            ref = abs(transform_partial(mesh, scene, f, 1, "expansion", d_hat=d))
            assert abs(val) < 1e-9 * ref

    def test_lambda_chain_rule(self):
        # d/d lambda_x equals the unit-rate expansion partial divided by lambda_x
        lam = 1.6
        scene = Scene(
            lambda0=LAM0,
            atoms=[(RoundedRectangle(660 * NM, 200 * NM, 82.5 * NM),
                    AffineParams(lambda_x=lam))],
            exit_line=ExitLine((10e-6, -2e-6), (10e-6, 2e-6), 64),
            eps_r=5.76, panels_per_wavelength=8,
        )
        mesh = scene.mesh()
        rng = np.random.default_rng(9)
        f = rng.normal(size=mesh.n_panels) + 1j * rng.normal(size=mesh.n_panels)
        direct = param_partial(mesh, scene, f, 0, "lambda_x")
        exp = transform_partial(mesh, scene, f, 0, "expansion", d_hat=np.array([1.0, 0.0]))
        assert direct == pytest.approx(exp / lam, rel=1e-14)

    def test_xc_gradient_is_x_translation(self, three_atom_scene):
        scene = three_atom_scene
        mesh = scene.mesh()
        rng = np.random.default_rng(11)
        f = rng.normal(size=mesh.n_panels) + 1j * rng.normal(size=mesh.n_panels)
        assert param_partial(mesh, scene, f, 0, "xc") == transform_partial(
            mesh, scene, f, 0, "translation", d_hat=np.array([1.0, 0.0])
        )


class TestSimilarityDerivative:
    @pytest.mark.slow
    def test_rotation_derivative_matches_fd(self, three_atom_scene, focus_target):
        """Complex dM/dtheta of the similarity against centered differences."""
        scene = three_atom_scene.with_params(
            [p for _, p in three_atom_scene.atoms]
        )
        scene.panels_per_wavelength = 32
        target = focus_target

        def m_of(theta):
            params = [AffineParams(theta=theta), AffineParams(yc=+PITCH),
                      AffineParams(yc=-PITCH)]
            sc = scene.with_params(params)
            sol = solve(assemble(sc.mesh(), sc), sc.incident)
            values = evaluate_E(sol, sc.line_nodes, side="exterior")
            lf = LineField(sc.line_nodes, sc.line_weights, values)
            return similarity(target, lf), (sc, sol)

        m0, (sc, fwd) = m_of(0.0)
        h = 1e-4
        dm_fd = (m_of(h)[0] - m_of(-h)[0]) / (2 * h)
        from tezdesign.solver import LineCurrent

        adj = solve(fwd.system, LineCurrent(np.conj(target.values)), adjoint=True)
        f = integrand_f(boundary_E(adj), boundary_E(fwd), 5.76)
        dm_adj = param_partial(fwd.system.mesh, sc, f, 0, "theta")
        assert abs(dm_adj - dm_fd) / abs(dm_fd) < 1e-3


class TestFullGradient:
    def test_zero_beta_recipe_gives_zero(self, three_atom_scene):
        from tezdesign.costs import AdjointRecipe, AdjointSource

        scene = three_atom_scene
        mesh = scene.mesh()
        tr_f = make_traces(mesh, seed=20)
        tr_a = make_traces(mesh, seed=21)
        recipe = AdjointRecipe(
            (AdjointSource(beta=0.0, coeff=1.0,
                           line_values=np.ones((len(scene.line_nodes), 2), complex)),),
            combine="single",
        )
        g = full_gradient(scene, mesh, tr_f, recipe, [tr_a],
                          ActiveParams.all_params(3))
        assert np.all(g == 0.0)
        assert len(g) == 15

    def test_recipe_solution_count_mismatch(self, three_atom_scene):
        from tezdesign.costs import AdjointRecipe, AdjointSource

        scene = three_atom_scene
        mesh = scene.mesh()
        tr = make_traces(mesh, seed=22)
        recipe = AdjointRecipe(
            (AdjointSource(beta=1.0, coeff=1.0,
                           line_values=np.zeros((len(scene.line_nodes), 2), complex)),),
            combine="single",
        )
        with pytest.raises(GradientError):
            full_gradient(scene, mesh, tr, recipe, [], ActiveParams.all_params(3))

    def test_norm_of_difference_stationary_gradient(self, three_atom_scene):
        """Target := current forward field; the gradient must vanish identically."""
        scene = three_atom_scene
        sol = solve(assemble(scene.mesh(), scene), scene.incident)
        values = evaluate_E(sol, scene.line_nodes, side="exterior")
        target = LineField(scene.line_nodes, scene.line_weights, values)
        spec = CostSpec("norm_of_difference", target=target)
        ev = evaluate_design(scene, spec, ActiveParams.all_params(3))
        assert ev.cost == 0.0
        assert np.all(ev.gradient == 0.0)

    def test_one_factorization_accounting(self, three_atom_scene, focus_target):
        """All-atoms/all-parameters gradient: 1 assembly + 1 forward + n_src adjoints."""
        scene = three_atom_scene
        expected_sources = {
            "scalar_product_mag": 1,
            "norm_of_difference": 1,
            "angle_between_fields": 2,
            "squared_norm_diff": 1,
            "angle_between_squares": 2,
            "point_intensity": 1,
        }
        for kind, n_src in expected_sources.items():
            spec = CostSpec(
                kind,
                target=None if kind == "point_intensity" else focus_target,
                point=np.array([37 * LAM0, LAM0]) if kind == "point_intensity" else None,
            )
            before = counters.snapshot()
            ev = evaluate_design(scene, spec, ActiveParams.all_params(3))
            assemblies, forwards, adjoints = (
                b - a for a, b in zip(before, counters.snapshot())
            )
            assert (assemblies, forwards, adjoints) == (1, 1, n_src), kind
            assert len(ev.gradient) == 15
            assert np.all(np.isfinite(ev.gradient))

    def test_global_translation_invariance(self, three_atom_scene):
        """Shifting atoms, exit line, and focal point together preserves the cost."""
        from tezdesign.optimize import evaluate_cost_only

        base = three_atom_scene
        x0 = (37 * LAM0, LAM0)

        def cost_for(shift):
            dx, dy = shift
            atoms = [
                (s, AffineParams(p.theta, p.lambda_x, p.lambda_y, p.xc + dx, p.yc + dy))
                for s, p in base.atoms
            ]
            line = ExitLine(
                (base.exit_line.p0[0] + dx, base.exit_line.p0[1] + dy),
                (base.exit_line.p1[0] + dx, base.exit_line.p1[1] + dy),
                base.exit_line.n_nodes,
            )
            sc = Scene(lambda0=base.lambda0, atoms=atoms, exit_line=line,
                       eps_r=5.76, incident=PlaneWave(1.0),
                       panels_per_wavelength=base.panels_per_wavelength)
            target = build_target_focus([(x0[0] + dx, x0[1] + dy)], 1.0, sc)
            # phase-insensitive cost so the plane-wave phase reference drops out
            return evaluate_cost_only(sc, CostSpec("scalar_product_mag", target=target))

        c0 = cost_for((0.0, 0.0))
        c_shift_y = cost_for((0.0, 0.4 * LAM0))
        c_shift_xy = cost_for((0.25 * LAM0, -0.3 * LAM0))
        assert abs(c_shift_y - c0) / c0 < 1e-8
        assert abs(c_shift_xy - c0) / c0 < 1e-8
