"""Hankel functions and the TEz dyadic Green tensor.

Time convention is e^{+j omega t}; outgoing cylindrical waves therefore carry
Hankel functions of the second kind.  The free-space scalar kernel used by the
boundary solver is g(rho) = -(j/4) H0^(2)(k rho), which satisfies
(Laplacian + k^2) g = -delta.
"""

from __future__ import annotations

import numpy as np
import scipy.special
from scipy.constants import epsilon_0, mu_0, speed_of_light

__all__ = [
    "DomainError",
    "SingularityError",
    "ETA_0",
    "MIN_SEPARATION",
    "epsilon_0",
    "mu_0",
    "speed_of_light",
    "hankel2",
    "green_tensor",
    "dipole_field_e",
    "dipole_field_h",
]

ETA_0 = float(np.sqrt(mu_0 / epsilon_0))

# Below this source/observer separation the kernels are meaningless; panel
# self-interactions must go through the solver's singular quadrature instead.
MIN_SEPARATION = 1e-12


class DomainError(ValueError):
    """Argument outside the supported domain of a special function."""


class SingularityError(ValueError):
    """Field evaluation requested at (or too close to) a source point."""


def hankel2(order: int, z):
    """Hankel function of the second kind H_n^(2)(z) for n in {0, 1}, z > 0."""
    if order not in (0, 1):
        raise DomainError(f"hankel2 supports orders 0 and 1, got {order}")
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0.0):
        raise DomainError("hankel2 requires strictly positive real argument")
    return scipy.special.hankel2(order, z)


def green_tensor(obs, src, k: float, omega: float, eps: float = epsilon_0):
    """2x2 tensor mapping an in-plane line-current density at `src` to E at `obs`.

    Broadcasts over leading axes of `obs` and `src`; returns shape (..., 2, 2)
    with g[..., 0, 0] = G11 etc.  The tensor is symmetric (G12 == G21) and
    satisfies G(obs, src) == G(src, obs)^T.
    """
    obs = np.asarray(obs, dtype=float)
    src = np.asarray(src, dtype=float)
    d = obs - src
    x = d[..., 0]
    y = d[..., 1]
    rho = np.hypot(x, y)
    if np.any(rho < MIN_SEPARATION):
        raise SingularityError(
            "green_tensor evaluated at coincident points; use singular quadrature"
        )
    h0 = scipy.special.hankel2(0, k * rho)
    h1 = scipy.special.hankel2(1, k * rho)
    pref = -k / (4.0 * omega * eps * rho**3)
    g11 = pref * (k * rho * y**2 * h0 + (x**2 - y**2) * h1)
    g22 = pref * (k * rho * x**2 * h0 + (y**2 - x**2) * h1)
    g12 = pref * (2.0 * h1 - k * rho * h0) * x * y
    out = np.empty(np.broadcast(x, y).shape + (2, 2), dtype=complex)
    out[..., 0, 0] = g11
    out[..., 0, 1] = g12
    out[..., 1, 0] = g12
    out[..., 1, 1] = g22
    return out


def dipole_field_e(obs, position, moment, k: float, omega: float):
    """E field of a line-current dipole: E(obs) = G(obs, position) . moment.

    `moment` is a complex 2-vector current density amplitude.  Shape of the
    result follows `obs` with a trailing axis of 2.
    """
    moment = np.asarray(moment, dtype=complex)
    g = green_tensor(obs, np.asarray(position, dtype=float), k, omega)
    return g @ moment


def dipole_field_h(obs, position, moment, k: float):
    """H_z field of the same line-current dipole.

    Derived from the vector potential of the scalar kernel:
    H_z(obs) = g'(rho) (u x p)_z / ... = (jk/4) H1^(2)(k rho) (u_x p_y - u_y p_x)/rho
    with u = obs - position.  Consistent with `green_tensor` (same source
    normalization), which the reciprocity tests rely on.
    """
    obs = np.asarray(obs, dtype=float)
    position = np.asarray(position, dtype=float)
    moment = np.asarray(moment, dtype=complex)
    u = obs - position
    rho = np.hypot(u[..., 0], u[..., 1])
    if np.any(rho < MIN_SEPARATION):
        raise SingularityError("dipole field evaluated at the dipole position")
    h1 = scipy.special.hankel2(1, k * rho)
    cross = u[..., 0] * moment[1] - u[..., 1] * moment[0]
    return 0.25j * k * h1 * cross / rho
