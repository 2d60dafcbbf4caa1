import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "tezdesign",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("tezdesign")

NM = 1e-9
LAMBDA0 = 660 * NM
PITCH = 726 * NM


@pytest.fixture(autouse=True)
def _reset_solver_counters():
    from tezdesign.solver import reset_counters

    reset_counters()
    yield


@pytest.fixture(scope="session")
def three_atom_scene():
    """Validation scene: three rounded rectangles stacked along y."""
    from tezdesign.geometry import AffineParams, RoundedRectangle
    from tezdesign.solver import ExitLine, PlaneWave, Scene

    rect = RoundedRectangle(660 * NM, 200 * NM, 82.5 * NM)
    atoms = [
        (rect, AffineParams()),
        (rect, AffineParams(yc=+PITCH)),
        (rect, AffineParams(yc=-PITCH)),
    ]
    return Scene(
        lambda0=LAMBDA0,
        atoms=atoms,
        exit_line=ExitLine((1320 * NM, -1056 * NM), (1320 * NM, 1056 * NM), 128),
        eps_r=5.76,
        incident=PlaneWave(1.0),
        panels_per_wavelength=16,
    )


@pytest.fixture(scope="session")
def focus_target(three_atom_scene):
    """RMS-normalized time-reversal target for the (37, 1) lambda0 focal point."""
    from tezdesign.costs import build_target_focus

    x0 = (37 * LAMBDA0, LAMBDA0)
    target = build_target_focus([x0], 1.0, three_atom_scene)
    length = float(np.sum(three_atom_scene.line_weights))
    scale = np.sqrt(target.norm_sq() / length)
    return target.with_values(target.values / scale)
