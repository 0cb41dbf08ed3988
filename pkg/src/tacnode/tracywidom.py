"""Tracy-Widom distribution oracle via Painleve-II integration.

Independent of the Nystrom/kernel machinery in this package: it only uses
scipy's Airy values for the initial data and an ODE integrator.  Serves as
the reference for the GOE/GUE determinant identities.
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.special import airy as _scipy_airy

# Downward integration away from the Hastings-McLeod separatrix amplifies
# local errors by ~exp((2/3) x^(3/2)); starting at 8 balances that growth
# against the q ~ Ai tail approximation error (~Ai(8)^3, negligible).
_X_HI = 8.0
_X_LO = -6.0


def _rhs(x, y):
    q, p, i1, m, j = y
    return [p, x * q + 2.0 * q ** 3, -q, -q * q, -m]


@lru_cache(maxsize=1)
def _solution():
    ai, aip, _, _ = _scipy_airy(_X_HI)
    # closed forms for the tail integrals of q ~ Ai:
    #   M(x) = int_x^inf Ai^2 = Ai'(x)^2 - x Ai(x)^2
    #   J(x) = int_x^inf (t-x) Ai^2 = (2 x^2 Ai^2 - 2 x Ai'^2 - Ai Ai')/3
    m0 = aip ** 2 - _X_HI * ai ** 2
    j0 = (2.0 * _X_HI ** 2 * ai ** 2 - 2.0 * _X_HI * aip ** 2 - ai * aip) / 3.0
    i0, _ = quad(lambda u: _scipy_airy(_X_HI + u)[0], 0.0, 40.0, epsabs=1e-16)
    sol = solve_ivp(
        _rhs,
        (_X_HI, _X_LO),
        [ai, aip, i0, m0, j0],
        method="DOP853",
        rtol=1e-13,
        atol=1e-15,
        dense_output=True,
    )
    if not sol.success:  # pragma: no cover
        raise RuntimeError(f"Painleve-II integration failed: {sol.message}")
    return sol


def _eval(s: float):
    s = float(s)
    if s > _X_HI:
        return 0.0, 0.0, 0.0  # I, M, J all ~ 0: F = 1
    if s < _X_LO:
        raise ValueError(f"Tracy-Widom oracle validated only for s >= {_X_LO}")
    q, p, i1, m, j = _solution().sol(s)
    return i1, m, j


def f_gue(s) -> float:
    """GUE Tracy-Widom distribution function ``F_2(s)``."""
    i1, _, j = _eval(s)
    return math.exp(-j)


def f_goe(s) -> float:
    """GOE Tracy-Widom distribution function ``F_1(s)``."""
    i1, _, j = _eval(s)
    return math.exp(-0.5 * j - 0.5 * i1)


def hastings_mcleod(s) -> float:
    """The Painleve-II solution q(s) asymptotic to Ai(s)."""
    s = float(s)
    if s > _X_HI:
        return float(_scipy_airy(s)[0])
    return float(_solution().sol(s)[0])
