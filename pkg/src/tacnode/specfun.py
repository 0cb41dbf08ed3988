"""Stable special-function kernels: Hermite polynomials, harmonic oscillator
functions, the Airy function, heat kernels and reflected heat kernels.

Everything here is a pure function.  Quantities whose log-magnitude can leave
the native double range are carried as :class:`ScaledReal` (scalar) or as
mantissa/exponent array pairs (internal vector routines).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

_LN2 = math.log(2.0)
_LOG2E = 1.0 / _LN2

# ---------------------------------------------------------------------------
# scaled arithmetic
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScaledReal:
    """A real number ``sign * mantissa * 2**exponent`` with mantissa in [1, 2).

    Zero is represented as ``ScaledReal(0.0, 0)``.  The carrier survives
    log-magnitudes far beyond the ±1024 binary exponent range of a double.
    """

    mantissa: float
    exponent: int

    @staticmethod
    def from_float(x: float) -> "ScaledReal":
        if x == 0.0:
            return ScaledReal(0.0, 0)
        if not math.isfinite(x):
            raise ValueError(f"cannot scale non-finite value {x}")
        m, e = math.frexp(x)  # m in +-[0.5, 1)
        return ScaledReal(m * 2.0, e - 1)

    @staticmethod
    def from_log2(log2_magnitude: float, sign: float = 1.0) -> "ScaledReal":
        if sign == 0.0:
            return ScaledReal(0.0, 0)
        e = math.floor(log2_magnitude)
        m = 2.0 ** (log2_magnitude - e)
        if m >= 2.0:  # guard rounding at the boundary
            m *= 0.5
            e += 1
        return ScaledReal(math.copysign(m, sign), e)

    def to_float(self) -> float:
        if self.mantissa == 0.0:
            return 0.0
        if self.exponent > 1100:
            return math.inf if self.mantissa > 0 else -math.inf
        if self.exponent < -1100:
            return 0.0
        return math.ldexp(self.mantissa, self.exponent)

    def log2abs(self) -> float:
        if self.mantissa == 0.0:
            return -math.inf
        return math.log2(abs(self.mantissa)) + self.exponent

    @property
    def sign(self) -> float:
        return math.copysign(1.0, self.mantissa) if self.mantissa != 0.0 else 0.0

    def __mul__(self, other):
        if isinstance(other, ScaledReal):
            if self.mantissa == 0.0 or other.mantissa == 0.0:
                return ScaledReal(0.0, 0)
            m = self.mantissa * other.mantissa
            e = self.exponent + other.exponent
            mm, ee = math.frexp(m)
            return ScaledReal(mm * 2.0, e + ee - 1)
        return self * ScaledReal.from_float(float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return ScaledReal(-self.mantissa, self.exponent)

    def __add__(self, other):
        if not isinstance(other, ScaledReal):
            other = ScaledReal.from_float(float(other))
        if self.mantissa == 0.0:
            return other
        if other.mantissa == 0.0:
            return self
        hi, lo = (self, other) if self.exponent >= other.exponent else (other, self)
        d = hi.exponent - lo.exponent
        if d > 120:
            return hi
        m = hi.mantissa + math.ldexp(lo.mantissa, -d)
        if m == 0.0:
            return ScaledReal(0.0, 0)
        mm, ee = math.frexp(m)
        return ScaledReal(mm * 2.0, hi.exponent + ee - 1)

    def __sub__(self, other):
        if not isinstance(other, ScaledReal):
            other = ScaledReal.from_float(float(other))
        return self + (-other)

    def __repr__(self):  # pragma: no cover - debugging aid
        return f"ScaledReal({self.mantissa!r} * 2**{self.exponent})"


def _normalize_pair(m: np.ndarray, e: np.ndarray):
    """Renormalize mantissa arrays into +-[1,2) (zeros stay zero)."""
    mm, ee = np.frexp(m)
    return mm * 2.0, e + ee - 1


# ---------------------------------------------------------------------------
# Hermite polynomials and harmonic oscillator functions
# ---------------------------------------------------------------------------


@njit(cache=True)
def _hermite_scaled_scalar(n, x):
    # H_{k+1} = 2 x H_k - 2 k H_{k-1}, carried as value * 2**c
    v_prev, c_prev = 0.0, 0
    v, c = 1.0, 0
    for k in range(n):
        d = c - c_prev
        if d > 1060:
            w = 2.0 * x * v
        else:
            w = 2.0 * x * v - 2.0 * k * math.ldexp(v_prev, -d)
        v_prev, c_prev = v, c
        v = w
        av = abs(v)
        if av > 8.98846567431158e307:  # 2**1023
            v = math.ldexp(v, -512)
            c += 512
        elif 0.0 < av < 1.1125369292536007e-308:  # 2**-1023
            v = math.ldexp(v, 512)
            c -= 512
    return v, c


@njit(cache=True)
def _ho_scaled_scalar(n, x):
    # phi_{k+1} = x sqrt(2/(k+1)) phi_k - sqrt(k/(k+1)) phi_{k-1}
    t = -0.5 * x * x * 1.4426950408889634  # log2 of the Gaussian half-weight
    c0 = int(math.floor(t))
    v = 0.7511255444649425 * 2.0 ** (t - c0)  # pi**-1/4 * leftover factor
    c = c0
    if n == 0:
        return v, c
    v_prev, c_prev = v, c
    v = math.sqrt(2.0) * x * v
    for k in range(1, n):
        d = c - c_prev
        if d > 1060:
            w = x * math.sqrt(2.0 / (k + 1)) * v
        else:
            w = x * math.sqrt(2.0 / (k + 1)) * v - math.sqrt(k / (k + 1.0)) * math.ldexp(v_prev, -d)
        v_prev, c_prev = v, c
        v = w
        av = abs(v)
        if av > 8.98846567431158e307:
            v = math.ldexp(v, -512)
            c += 512
        elif 0.0 < av < 1.1125369292536007e-308:
            v = math.ldexp(v, 512)
            c -= 512
    return v, c


def hermite_poly(n: int, x: float) -> ScaledReal:
    """Physicists' Hermite polynomial ``H_n(x)`` in scaled form."""
    if n < 0:
        raise ValueError("n must be >= 0")
    v, c = _hermite_scaled_scalar(int(n), float(x))
    return ScaledReal.from_float(v) * ScaledReal(1.0, int(c)) if v != 0.0 else ScaledReal(0.0, 0)


def harmonic_oscillator(n: int, x: float) -> float:
    """Harmonic oscillator function ``phi_n(x)``; never overflows internally.

    phi_n(x) = pi**-1/4 2**(-n/2) (n!)**-1/2 exp(-x^2/2) H_n(x), evaluated by
    the three-term recurrence on phi_n itself with running binary rescaling,
    so it stays valid out to n ~ 1e6 and |x| ~ 1e3.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    v, c = _ho_scaled_scalar(int(n), float(x))
    if v == 0.0 or c < -1100:
        return 0.0
    if c > 1100:  # cannot happen for a bounded function; defensive
        return math.inf * v
    return math.ldexp(v, int(c))


def hermite_all_scaled(nmax: int, x: np.ndarray):
    """All ``H_n(x_j)`` for n <= nmax as mantissa/exponent arrays.

    Returns (M, E) with shape (nmax+1, len(x)); value = M * 2**E, M in +-[1,2).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    m = np.zeros((nmax + 1, x.size))
    e = np.zeros((nmax + 1, x.size), dtype=np.int64)
    v = np.ones_like(x)
    c = np.zeros(x.size, dtype=np.int64)
    v_prev = np.zeros_like(x)
    c_prev = np.zeros(x.size, dtype=np.int64)
    m[0], e[0] = _normalize_pair(v, c)
    for k in range(nmax):
        top = np.maximum(c, c_prev)
        w = 2.0 * x * np.ldexp(v, np.clip(c - top, -1060, 0).astype(np.int32)) \
            - 2.0 * k * np.ldexp(v_prev, np.clip(c_prev - top, -1060, 0).astype(np.int32))
        v_prev, c_prev = v, c
        v, c = _normalize_pair(w, top)
        m[k + 1], e[k + 1] = v, c
    return m, e


def harmonic_oscillator_all_scaled(nmax: int, x: np.ndarray):
    """All ``phi_n(x_j)`` for n <= nmax as mantissa/exponent arrays."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    m = np.zeros((nmax + 1, x.size))
    e = np.zeros((nmax + 1, x.size), dtype=np.int64)
    t = -0.5 * x * x * _LOG2E
    c = np.floor(t).astype(np.int64)
    v = (math.pi ** -0.25) * np.exp2(t - c)
    v, c = _normalize_pair(v, c)
    m[0], e[0] = v, c
    if nmax == 0:
        return m, e
    v_prev, c_prev = v, c
    v, c = _normalize_pair(math.sqrt(2.0) * x * v, c)
    m[1], e[1] = v, c
    for k in range(1, nmax):
        top = np.maximum(c, c_prev)
        w = x * math.sqrt(2.0 / (k + 1)) * np.ldexp(v, np.clip(c - top, -1060, 0).astype(np.int32)) \
            - math.sqrt(k / (k + 1.0)) * np.ldexp(v_prev, np.clip(c_prev - top, -1060, 0).astype(np.int32))
        v_prev, c_prev = v, c
        v, c = _normalize_pair(w, top)
        m[k + 1], e[k + 1] = v, c
    return m, e


# ---------------------------------------------------------------------------
# Airy function
# ---------------------------------------------------------------------------

# Region boundaries for the dual-regime evaluation.  Between the Maclaurin
# series and the large-|x| expansions sits a saddle-point contour quadrature;
# the switch points keep every regime at <= ~1e-13 relative error.
AIRY_SERIES_MAX = 2.0
AIRY_SERIES_MIN = -5.0
AIRY_ASYMP_POS = 8.5
AIRY_ASYMP_NEG = -9.5
AIRY_VALIDATED_RANGE = (-20.0, 40.0)

_AI0 = 3.0 ** (-2.0 / 3.0) / math.gamma(2.0 / 3.0)
_AIP0 = -(3.0 ** (-1.0 / 3.0)) / math.gamma(1.0 / 3.0)

_GL_X, _GL_W = np.polynomial.legendre.leggauss(320)
_GLN_X, _GLN_W = np.polynomial.legendre.leggauss(520)


def _airy_series(x: float) -> float:
    # Kahan-compensated Maclaurin sums keep the mildly alternating tails tame
    f, cf, tf = 1.0, 0.0, 1.0
    g, cg, tg = x, 0.0, x
    x3 = x * x * x
    for k in range(0, 60):
        tf *= x3 / ((3 * k + 2) * (3 * k + 3))
        tg *= x3 / ((3 * k + 3) * (3 * k + 4))
        y = tf - cf
        t = f + y
        cf = (t - f) - y
        f = t
        y = tg - cg
        t = g + y
        cg = (t - g) - y
        g = t
        if abs(tf) < 1e-19 * abs(f) and abs(tg) < 1e-19 * (abs(g) + 1e-300):
            break
    return _AI0 * f + _AIP0 * g


def _airy_asymp_pos_scaled(x: float) -> float:
    # Ai(x) * exp(zeta), zeta = 2/3 x^(3/2); optimally truncated expansion
    zeta = (2.0 / 3.0) * x ** 1.5
    s, u, last = 1.0, 1.0, 1.0
    for k in range(0, 40):
        u *= -(6 * k + 1) * (6 * k + 5) / (72.0 * (k + 1) * zeta)
        if abs(u) >= last:
            break
        s += u
        last = abs(u)
    return s / (2.0 * math.sqrt(math.pi) * x ** 0.25)


def _airy_asymp_neg(x: float) -> float:
    z = -x
    zeta = (2.0 / 3.0) * z ** 1.5
    u = [1.0]
    for k in range(0, 20):
        u.append(u[-1] * (6 * k + 1) * (6 * k + 5) / (72.0 * (k + 1)))
    p, q = 0.0, 0.0
    for k in range(0, 9):
        tp = (-1) ** k * u[2 * k] / zeta ** (2 * k)
        tq = (-1) ** k * u[2 * k + 1] / zeta ** (2 * k + 1)
        if abs(tp) > 1.0:
            break
        p += tp
        q += tq
    arg = zeta + math.pi / 4.0
    return (math.sin(arg) * p - math.cos(arg) * q) / (math.sqrt(math.pi) * z ** 0.25)


def _airy_contour_pos_scaled(x: float) -> float:
    # Ai(x) e^zeta = 1/(2 pi) * Int exp(-sqrt(x) s^2) cos(s^3/3) ds
    smax = 6.5 / x ** 0.25
    s = 0.5 * smax * (_GL_X + 1.0)
    w = 0.5 * smax * _GL_W
    integral = 2.0 * np.sum(w * np.exp(-x ** 0.5 * s * s) * np.cos(s ** 3 / 3.0))
    return integral / (2.0 * math.pi)


def _airy_contour_neg(x: float) -> float:
    # descent path through the two conjugate saddles of exp(t^3/3 - x t);
    # the sigma < 0 side re-grows like exp(|sigma|^3/(3 sqrt 2)), so it is
    # cut where the damping is still >= exp(-(8/3) z^(3/2))
    z = -x
    zeta = (2.0 / 3.0) * z ** 1.5
    s_pos = 6.5 / z ** 0.25
    # damping along sigma < 0 is f(s) = sqrt(z) s^2 - s^3/(3 sqrt 2), maximal
    # at s* = 2 sqrt(2 z); stop at f = 40 if reachable, else at s*
    s_star = 2.0 * math.sqrt(2.0 * z)
    f = lambda s: math.sqrt(z) * s * s - s ** 3 / (3.0 * math.sqrt(2.0))
    if f(s_star) <= 40.0:
        s_neg = s_star
    else:
        lo, hi = 0.0, s_star
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            lo, hi = (mid, hi) if f(mid) < 40.0 else (lo, mid)
        s_neg = hi
    sig = -s_neg + (_GLN_X + 1.0) * 0.5 * (s_pos + s_neg)
    w = 0.5 * (s_pos + s_neg) * _GLN_W
    c = (-1.0 + 1.0j) / (3.0 * math.sqrt(2.0))
    vals = np.exp(-math.sqrt(z) * sig ** 2 + c * sig ** 3)
    integral = np.sum(w * vals)
    return (np.exp(1j * (zeta - math.pi / 4.0)) * integral).real / math.pi


def airy_ai(x: float, quality: bool = False):
    """Airy function ``Ai(x)``.

    Relative error <= ~1e-12 on [-20, 40]; outside that window the value is
    still best-effort (the expansions only improve with |x|) but underflow to
    zero can occur for x beyond ~105.  With ``quality=True`` returns
    ``(value, in_validated_range)``.
    """
    x = float(x)
    if x >= AIRY_ASYMP_POS:
        zeta = (2.0 / 3.0) * x ** 1.5
        val = _airy_asymp_pos_scaled(x) * math.exp(-min(zeta, 745.0)) if zeta < 745.0 else 0.0
    elif x >= AIRY_SERIES_MAX:
        val = _airy_contour_pos_scaled(x) * math.exp(-(2.0 / 3.0) * x ** 1.5)
    elif x >= AIRY_SERIES_MIN:
        val = _airy_series(x)
    elif x >= AIRY_ASYMP_NEG:
        val = _airy_contour_neg(x)
    else:
        val = _airy_asymp_neg(x)
    if quality:
        lo, hi = AIRY_VALIDATED_RANGE
        return val, (lo <= x <= hi)
    return val


def airy_ai_escaled(x: float) -> float:
    """``Ai(x) * exp(2/3 x^(3/2))`` for x >= 0 (exponentially scaled Airy)."""
    x = float(x)
    if x < 0.0:
        raise ValueError("escaled form needs x >= 0")
    if x >= AIRY_ASYMP_POS:
        return _airy_asymp_pos_scaled(x)
    if x >= AIRY_SERIES_MAX:
        return _airy_contour_pos_scaled(x)
    return _airy_series(x) * math.exp((2.0 / 3.0) * x ** 1.5)


def airy_shifted(s: float, x: float) -> float:
    """Exponentially tilted Airy function ``exp(2 s^3/3 + x s) Ai(s^2 + x)``.

    The tilt and the decay of Ai are combined in log space, so the result is
    finite whenever it is representable even if either factor alone is not.
    """
    s = float(s)
    x = float(x)
    y = s * s + x
    if y >= 0.0:
        expo = 2.0 * s ** 3 / 3.0 + x * s - (2.0 / 3.0) * y ** 1.5
        if expo > 708.0:
            raise OverflowError(f"airy_shifted overflow: exponent {expo:.3g}")
        if expo < -745.0:
            return 0.0
        return airy_ai_escaled(y) * math.exp(expo)
    expo = 2.0 * s ** 3 / 3.0 + x * s
    if expo > 708.0:
        raise OverflowError(f"airy_shifted overflow: exponent {expo:.3g}")
    return airy_ai(y) * math.exp(expo)


# ---------------------------------------------------------------------------
# heat kernels
# ---------------------------------------------------------------------------


def heat_kernel(t, x):
    """Gaussian heat kernel ``(2 pi t)^(-1/2) exp(-x^2 / (2t))``, t > 0."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0.0):
        raise ValueError("heat_kernel needs t > 0")
    x = np.asarray(x, dtype=float)
    out = np.exp(-x * x / (2.0 * t)) / np.sqrt(2.0 * math.pi * t)
    return float(out) if out.ndim == 0 else out


def reflected_kernel(tau1, tau2, u, v):
    """Transition density killed at 0 for diffusion coefficient 2.

    T(u, v) = phi_{2(tau2-tau1)}(v-u) - phi_{2(tau2-tau1)}(v+u); for
    u, v <= 0 this is the absorbed-at-zero density of the motion.
    """
    if not tau2 > tau1:
        raise ValueError("reflected_kernel needs tau2 > tau1")
    dt = 2.0 * (tau2 - tau1)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    out = heat_kernel(dt, v - u) - heat_kernel(dt, v + u)
    return float(out) if np.ndim(out) == 0 else out
