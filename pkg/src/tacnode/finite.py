"""Finite-N building blocks for bridges conditioned to stay below a level.

The two families entering every kernel,

    phi-family  P_tau^n(u)  (Gaussian decay in u),
    psi-family  S_tau^m(u)  (exponential growth in u),

are assembled from scaled Hermite / oscillator recurrences with all large
exponential factors combined in log space, so the module stays usable out to
hundreds of bridges where the raw factors exceed 1e300 by wide margins.

Index-space conditioning: the boundary kernel matrix ``k0`` has entries of
magnitude ~ rho**(n-m) with rho ~ r/sqrt(2).  All resolvent work happens on
the balanced matrix ``rho**(m-n) * k0`` (a diagonal conjugation, so
determinants and the sandwiched bilinear forms are unchanged), with the
diagonal scales folded into the psi/phi evaluations.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from math import lgamma

import gmpy2
import numpy as np
from scipy.linalg import lu_factor, lu_solve

from . import specfun
from .quadrature import DiscretizedOperator, QuadratureRule, gauss_legendre

_LN2 = math.log(2.0)
_LOG2E = 1.0 / _LN2

N_SOFT_LIMIT = 200      # beyond this the limit module is the better tool
N_HARD_LIMIT = 2000     # precision parameters are sized for this range
CONJUGATION_C = 8.0     # Gaussian taming factor exp(-u^2/(C tau)), C > 4


# ---------------------------------------------------------------------------
# coordinate maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScalingMap:
    """Coordinates for N bridges below level r.

    Bridge coordinates: tau(t) = t/(4(1-t)), u = (x-r)/(sqrt(2)(1-t)).
    Fluctuation coordinates (available when built via :meth:`tacnode`):
    t = (1+T N^(-1/3))/2, x = sqrt(N) + (R+U) N^(-1/6)/2, with the level
    itself at r = sqrt(N) + R N^(-1/6)/2.
    """

    n: int
    r: float
    R: float | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("need at least one bridge")
        if self.n > N_HARD_LIMIT:
            raise ValueError(f"finite module is sized for N <= {N_HARD_LIMIT}")

    @classmethod
    def tacnode(cls, n: int, R: float) -> "ScalingMap":
        r = math.sqrt(n) + R * n ** (-1.0 / 6.0) / 2.0
        return cls(n, r, R)

    # -- bridge coordinates ------------------------------------------------
    @staticmethod
    def tau(t):
        t = np.asarray(t, dtype=float)
        if np.any((t <= 0.0) | (t >= 1.0)):
            raise ValueError("t must lie in (0, 1)")
        out = 0.25 * t / (1.0 - t)
        return float(out) if out.ndim == 0 else out

    @staticmethod
    def t_from_tau(tau):
        tau = np.asarray(tau, dtype=float)
        out = 4.0 * tau / (1.0 + 4.0 * tau)
        return float(out) if out.ndim == 0 else out

    def u(self, t, x):
        return (np.asarray(x, dtype=float) - self.r) / (math.sqrt(2.0) * (1.0 - np.asarray(t)))

    def x_from_u(self, t, u):
        return self.r + math.sqrt(2.0) * (1.0 - np.asarray(t)) * np.asarray(u, dtype=float)

    def eta(self, t, h):
        """Projection level for a constraint value h at time t."""
        tau = self.tau(t)
        return float((1.0 + 4.0 * tau) * (h - self.r) / math.sqrt(2.0))

    # -- fluctuation coordinates --------------------------------------------
    def t_of_T(self, T):
        t = (1.0 + np.asarray(T, dtype=float) * self.n ** (-1.0 / 3.0)) / 2.0
        if np.any((t <= 0.0) | (t >= 1.0)):
            raise ValueError("T maps outside (0, 1)")
        return float(t) if np.ndim(t) == 0 else t

    def x_of_U(self, U):
        if self.R is None:
            raise ValueError("map was not built with a fluctuation position R")
        return math.sqrt(self.n) + (self.R + np.asarray(U, dtype=float)) * self.n ** (-1.0 / 6.0) / 2.0


# ---------------------------------------------------------------------------
# threshold profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdProfile:
    """Barrier description on [0, 1]: global level r, optionally lowered
    either at finitely many times or on a piecewise-constant window."""

    r: float
    kind: str  # constant | points | piecewise
    points: tuple = ()      # ((t_i, h_i), ...) strictly increasing t
    segments: tuple = ()    # ((t_a, t_b, h), ...) contiguous partition

    @classmethod
    def constant(cls, r: float) -> "ThresholdProfile":
        return cls(float(r), "constant")

    @classmethod
    def from_points(cls, r: float, points) -> "ThresholdProfile":
        pts = tuple((float(t), float(h)) for t, h in points)
        if not pts:
            raise ValueError("need at least one point constraint")
        ts = [t for t, _ in pts]
        if any(not 0.0 < t < 1.0 for t in ts):
            raise ValueError("constraint times must lie strictly inside (0, 1)")
        if any(t2 <= t1 for t1, t2 in zip(ts, ts[1:])):
            raise ValueError("constraint times must be strictly increasing")
        if any(h > r for _, h in pts):
            raise ValueError("constraint values must not exceed the level r")
        return cls(float(r), "points", points=pts)

    @classmethod
    def piecewise(cls, r: float, segments) -> "ThresholdProfile":
        segs = tuple((float(a), float(b), float(h)) for a, b, h in segments)
        if not segs:
            raise ValueError("need at least one segment")
        if any(not (0.0 < a < b < 1.0) for a, b, _ in segs):
            raise ValueError("segments must lie strictly inside (0, 1)")
        if any(abs(s1[1] - s2[0]) > 1e-12 for s1, s2 in zip(segs, segs[1:])):
            raise ValueError("segments must form a contiguous partition")
        if any(h > r for _, _, h in segs):
            raise ValueError("segment levels must not exceed the level r")
        return cls(float(r), "piecewise", segments=segs)

    @property
    def support(self):
        if self.kind == "constant":
            return None
        if self.kind == "points":
            return self.points[0][0], self.points[-1][0]
        return self.segments[0][0], self.segments[-1][1]


# ---------------------------------------------------------------------------
# boundary kernel matrix (index space)
# ---------------------------------------------------------------------------


def _k0_tilde_mp(n: int, r: float, rho: float, prec: int) -> np.ndarray:
    """Balanced boundary matrix rho**(m-i) K0(i, m) in float64.

    Row i of the generating table is the coefficient sequence of
    (sqrt(2) r - Z)^i exp(2 sqrt(2) r Z); each row follows from the previous
    by one multiply-subtract, which is exact in sufficiently wide arithmetic.
    The severe alternating cancellation (condition ~ exp(2 r^2)) is absorbed
    by the working precision, not by compensation tricks.
    """
    ctx = gmpy2.context(precision=prec)
    with gmpy2.local_context(ctx):
        sqrt2r = gmpy2.sqrt(gmpy2.mpfr(2)) * gmpy2.mpfr(r)
        rr = gmpy2.mpfr(rho)
        s = sqrt2r / rr
        t = 2 * sqrt2r * rr
        pref = gmpy2.exp(-2 * gmpy2.mpfr(r) ** 2)
        row = [gmpy2.mpfr(1)]
        for m in range(1, n):
            row.append(row[-1] * t / m)
        out = np.empty((n, n))
        out[0] = [float(pref * v) for v in row]
        for i in range(1, n):
            new = [s * row[0]]
            for m in range(1, n):
                new.append(s * row[m] - row[m - 1])
            out[i] = [float(pref * v) for v in new]
            row = new
    return out


def _k0_precision(n: int) -> int:
    return max(192, int(3.3 * n) + 96)


class KernelMatrixK0:
    """Boundary kernel on {0..N-1} with its resolvent factorization.

    ``tilde`` holds the balanced matrix; ``entries`` reconstructs the raw
    kernel (may overflow float range for N beyond ~200, where off-diagonal
    raw magnitudes exceed 1e308 even though nothing in the determinant or
    resolvent pipeline does).
    """

    def __init__(self, n: int, r: float):
        if n < 1:
            raise ValueError("need n >= 1")
        self.n = int(n)
        self.r = float(r)
        self.rho = max(1.0, self.r / math.sqrt(2.0))
        prec = _k0_precision(self.n)
        self.tilde = _k0_tilde_mp(self.n, self.r, self.rho, prec)
        check = _k0_tilde_mp(self.n, self.r, self.rho, prec + 64)
        scale = np.abs(check).max() or 1.0
        err = np.abs(self.tilde - check).max()
        if err > 1e-12 * scale:
            warnings.warn(
                f"boundary kernel cancellation estimate {err / scale:.2e} "
                "exceeds 1e-12 of the result", RuntimeWarning)
        self.tilde = check
        self._lu = lu_factor(np.eye(self.n) - self.tilde)
        sign, logabs = np.linalg.slogdet(np.eye(self.n) - self.tilde)
        self._det_sign = float(sign)
        self._det_log = float(logabs)

    @property
    def entries(self) -> np.ndarray:
        i = np.arange(self.n)
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            scale = np.exp((i[:, None] - i[None, :]) * math.log(self.rho))
            out = self.tilde * scale
        out[self.tilde == 0.0] = 0.0
        return out

    @property
    def log_det_complement(self) -> float:
        """log det(I - K0); sign is positive for any r > 0."""
        if self._det_sign <= 0.0:
            raise ArithmeticError("I - K0 is numerically singular")
        return self._det_log

    def solve_balanced(self, b: np.ndarray) -> np.ndarray:
        """(I - tilde)^-1 b for the balanced system."""
        return lu_solve(self._lu, b)


@lru_cache(maxsize=32)
def k0_matrix(smap: ScalingMap) -> KernelMatrixK0:
    """Boundary kernel matrix for a scaling map (cached per map)."""
    return KernelMatrixK0(smap.n, smap.r)


def k0_entry_integral(smap: ScalingMap, n: int, m: int, tau: float = 0.25,
                      nodes: int = 600) -> float:
    """delta(n,m) - integral of P_tau^n S_tau^m over the negative axis.

    Independent cross-check of the closed-form boundary matrix; the value of
    tau must not matter.
    """
    L = _phipsi_truncation(tau, smap.r)
    rule = gauss_legendre(-L, 0.0, nodes)
    fk = finite_kernel(smap)
    phim, phie = fk._phi_scaled(tau, rule.nodes, balance=False)
    psim, psie = fk._psi_scaled(tau, rule.nodes, balance=False)
    with np.errstate(under="ignore"):
        prod_m = phim[n] * psim[m]
    prod_e = phie[n] + psie[m]
    vals = np.ldexp(prod_m, prod_e.astype(np.int32))
    integral = rule.integrate(vals)
    return (1.0 if n == m else 0.0) - integral


def _phipsi_truncation(tau: float, r: float) -> float:
    # envelope of the phi*psi product: exp(-u^2/(8 tau) + g |u|) with the
    # growth rate g collecting the worst linear exponents of both families
    g = math.sqrt(2.0) * r + abs(4.0 * tau - 1.0) * r / (4.0 * math.sqrt(2.0) * tau)
    peak = 4.0 * tau * g
    return peak + math.sqrt(8.0 * tau * 45.0) + 4.0


# ---------------------------------------------------------------------------
# the two kernel families
# ---------------------------------------------------------------------------


class FiniteKernel:
    """Evaluator for the extended kernel of N conditioned bridges.

    Holds the factorized boundary system; all evaluation methods are pure
    and reuse the cached factorization, so one instance can serve any number
    of threads after construction.
    """

    def __init__(self, smap: ScalingMap):
        if smap.n > N_SOFT_LIMIT:
            warnings.warn(
                f"N = {smap.n} > {N_SOFT_LIMIT}: the finite module still works "
                "but the scaling-limit module is the intended tool",
                RuntimeWarning, stacklevel=2)
        self.map = smap
        self.k0 = k0_matrix(smap)
        self.log_rho = math.log(self.k0.rho)

    # -- scaled family evaluations ------------------------------------------
    def _phi_scaled(self, tau, u, balance=True, conj=False):
        """P_tau^n(u_j) (times rho^-n if balance) as mantissa/exponent arrays."""
        n = self.map.n
        r = self.map.r
        u = np.atleast_1d(np.asarray(u, dtype=float))
        a = (1.0 + 4.0 * tau) * r / (2.0 * math.sqrt(2.0 * tau))
        b = u / (2.0 * math.sqrt(tau))
        mp_, ep_ = specfun.harmonic_oscillator_all_scaled(n - 1, a + b)
        mm_, em_ = specfun.harmonic_oscillator_all_scaled(n - 1, a - b)
        ns = np.arange(n, dtype=float)
        lpref = (0.5 * np.array([lgamma(k + 1.0) for k in range(n)])
                 - (1.5 * ns + 1.0) * _LN2 - 0.5 * (ns + 1.0) * math.log(tau)
                 - 0.25 * math.log(math.pi))
        if balance:
            lpref = lpref - ns * self.log_rho
        ep_exp = 2.0 * tau * r * r + math.sqrt(2.0) * r * u - 0.5 * (a + b) ** 2
        em_exp = 2.0 * tau * r * r - math.sqrt(2.0) * r * u - 0.5 * (a - b) ** 2
        if conj:
            ep_exp = ep_exp + u * u / (CONJUGATION_C * tau)
            em_exp = em_exp + u * u / (CONJUGATION_C * tau)
        return _combine_two(mp_, ep_, lpref[:, None] + ep_exp[None, :],
                            mm_, em_, lpref[:, None] + em_exp[None, :])

    def _psi_scaled(self, tau, u, balance=True, conj=False):
        """S_tau^m(u_j) (times rho^+m if balance) as mantissa/exponent arrays."""
        n = self.map.n
        r = self.map.r
        u = np.atleast_1d(np.asarray(u, dtype=float))
        a = (1.0 + 4.0 * tau) * r / (2.0 * math.sqrt(2.0 * tau))
        b = u / (2.0 * math.sqrt(tau))
        mp_, ep_ = specfun.hermite_all_scaled(n - 1, a + b)
        mm_, em_ = specfun.hermite_all_scaled(n - 1, a - b)
        ms = np.arange(n, dtype=float)
        lpref = ms * math.log(2.0 * math.sqrt(tau)) \
            - np.array([lgamma(k + 1.0) for k in range(n)])
        if balance:
            lpref = lpref + ms * self.log_rho
        fp_exp = -2.0 * tau * r * r - math.sqrt(2.0) * r * u
        fm_exp = -2.0 * tau * r * r + math.sqrt(2.0) * r * u
        if conj:
            fp_exp = fp_exp - u * u / (CONJUGATION_C * tau)
            fm_exp = fm_exp - u * u / (CONJUGATION_C * tau)
        return _combine_two(mp_, ep_, lpref[:, None] + fp_exp[None, :],
                            mm_, em_, lpref[:, None] + fm_exp[None, :])

    # -- kernel assembly ------------------------------------------------------
    def smooth(self, tau_a: float, u_a, tau_b: float, u_b, conj=False) -> np.ndarray:
        """Resolvent part of the extended kernel on a grid.

        Entry (i, j) is  sum_{n,m} S_{tau_a}^n(u_a[i]) (I-K0)^{-1}(n,m)
        P_{tau_b}^m(u_b[j]), optionally with the Gaussian endpoint conjugation
        folded in (a pure diagonal rescaling, determinants unchanged).
        """
        u_a = np.atleast_1d(np.asarray(u_a, dtype=float))
        u_b = np.atleast_1d(np.asarray(u_b, dtype=float))
        psi_m, psi_e = self._psi_scaled(tau_a, u_a, conj=conj)
        phi_m, phi_e = self._phi_scaled(tau_b, u_b, conj=conj)
        psi, epsi = _common_exponent_columns(psi_m, psi_e)
        phi, ephi = _common_exponent_columns(phi_m, phi_e)
        core = psi.T @ self.k0.solve_balanced(phi)
        expo = epsi[:, None] + ephi[None, :]
        with np.errstate(over="ignore", under="ignore"):
            out = np.ldexp(core, np.clip(expo, -30000, 30000).astype(np.int32))
        return out

    def extended(self, tau1: float, u1: float, tau2: float, u2: float) -> float:
        """Extended correlation kernel in bridge coordinates, u_i <= 0."""
        if tau1 <= 0.0 or tau2 <= 0.0:
            raise ValueError("tau must be positive")
        if u1 > 0.0 or u2 > 0.0:
            raise ValueError("u must be <= 0")
        val = float(self.smooth(tau1, [u1], tau2, [u2])[0, 0])
        if tau1 < tau2:
            val -= float(specfun.reflected_kernel(tau1, tau2, u1, u2))
        return val


@lru_cache(maxsize=16)
def finite_kernel(smap: ScalingMap) -> FiniteKernel:
    return FiniteKernel(smap)


def _combine_two(m1, e1, ln_f1, m2, e2, ln_f2):
    """a*exp(ln_f1) - b*exp(ln_f2) for scaled arrays (a = m1 2^e1 etc.)."""
    t1 = e1 + np.floor(ln_f1 * _LOG2E)
    r1 = m1 * np.exp2(ln_f1 * _LOG2E - np.floor(ln_f1 * _LOG2E))
    t2 = e2 + np.floor(ln_f2 * _LOG2E)
    r2 = m2 * np.exp2(ln_f2 * _LOG2E - np.floor(ln_f2 * _LOG2E))
    top = np.maximum(t1, t2)
    with np.errstate(under="ignore"):
        v = r1 * np.exp2(np.clip(t1 - top, -1060, 0)) \
            - r2 * np.exp2(np.clip(t2 - top, -1060, 0))
    mm, ee = np.frexp(v)
    return mm * 2.0, top.astype(np.int64) + ee - 1


def _common_exponent_columns(mant, expo):
    """Per-column common-exponent extraction: values = out * 2^eout[col]."""
    mag = np.where(mant == 0.0, -np.inf, expo)
    eout = mag.max(axis=0)
    eout = np.where(np.isfinite(eout), eout, 0.0)
    with np.errstate(under="ignore"):
        out = mant * np.exp2(np.clip(expo - eout[None, :], -1060, 0))
    return out, eout


# ---------------------------------------------------------------------------
# public scalar operations
# ---------------------------------------------------------------------------


def phi_fn(smap: ScalingMap, tau: float, n: int, u: float) -> float:
    """P_tau^n(u): the Gaussian-decay kernel family member."""
    if not 0 <= n < smap.n:
        raise ValueError("index out of range")
    fk = finite_kernel(smap)
    m, e = fk._phi_scaled(float(tau), [float(u)], balance=False)
    return float(np.ldexp(m[n, 0], int(np.clip(e[n, 0], -30000, 30000))))


def psi_fn(smap: ScalingMap, tau: float, m: int, u: float) -> float:
    """S_tau^m(u): the exponentially growing kernel family member."""
    if not 0 <= m < smap.n:
        raise ValueError("index out of range")
    fk = finite_kernel(smap)
    mm, ee = fk._psi_scaled(float(tau), [float(u)], balance=False)
    return float(np.ldexp(mm[m, 0], int(np.clip(ee[m, 0], -30000, 30000))))


def extended_kernel_finite(smap: ScalingMap, tau1: float, u1: float,
                           tau2: float, u2: float) -> float:
    return finite_kernel(smap).extended(tau1, u1, tau2, u2)


def original_coordinates_kernel(smap: ScalingMap, t1: float, x1: float,
                                t2: float, x2: float) -> float:
    """Extended kernel in original (t, x) coordinates, x_i <= r."""
    for t in (t1, t2):
        if not 0.0 < t < 1.0:
            raise ValueError("times must lie in (0, 1)")
    if x1 > smap.r or x2 > smap.r:
        raise ValueError("positions must not exceed the level r")
    tau1, tau2 = smap.tau(t1), smap.tau(t2)
    u1 = float(smap.u(t1, x1))
    u2 = float(smap.u(t2, x2))
    val = finite_kernel(smap).extended(tau1, u1, tau2, u2)
    return val / math.sqrt(2.0 * (1.0 - t1) * (1.0 - t2))


# ---------------------------------------------------------------------------
# conjugated (t, x)-coordinate family and consistency checks
# ---------------------------------------------------------------------------


def tilde_functions(smap: ScalingMap, t: float, n: int, x: float):
    """The (t, x)-coordinate kernel family pair at one point."""
    if not 0.0 < t < 1.0:
        raise ValueError("t must lie in (0, 1)")
    r = smap.r
    s = math.sqrt(2.0 * t * (1.0 - t))
    h1 = specfun.hermite_poly(n, x / s)
    h2 = specfun.hermite_poly(n, (2.0 * r - x) / s)
    lc_phi = -n * _LN2 - 0.5 * math.log(math.pi) \
        + 0.5 * (n + 1) * math.log((1.0 - t) / t)
    phi = (h1 * specfun.ScaledReal.from_log2((lc_phi - x * x / (2.0 * t)) * _LOG2E)
           - h2 * specfun.ScaledReal.from_log2((lc_phi - (2 * r - x) ** 2 / (2.0 * t)) * _LOG2E))
    lc_psi = -lgamma(n + 1.0) + 0.5 * n * math.log(t / (1.0 - t))
    psi = (h1 * specfun.ScaledReal.from_log2((lc_psi - x * x / (2.0 * (1.0 - t))) * _LOG2E)
           - h2 * specfun.ScaledReal.from_log2((lc_psi - (2 * r - x) ** 2 / (2.0 * (1.0 - t))) * _LOG2E))
    return phi.to_float(), psi.to_float()


def tilde_transition(smap: ScalingMap, t1: float, t2: float, x: float, y: float) -> float:
    """Free below-r transition density in (t, x) coordinates."""
    if not t2 > t1:
        raise ValueError("need t2 > t1")
    dt = t2 - t1
    r = smap.r
    return (math.exp(-(x - y) ** 2 / (2.0 * dt))
            - math.exp(-(2.0 * r - x - y) ** 2 / (2.0 * dt))) / math.sqrt(2.0 * math.pi * dt)


def conjugation_check(smap: ScalingMap, tau: float, n: int, u: float,
                      tau2: float | None = None) -> float:
    """Max relative mismatch between the bridge-coordinate kernels and their
    conjugated (t, x)-coordinate counterparts at one evaluation point."""
    t = ScalingMap.t_from_tau(tau)
    x = float(smap.x_from_u(t, u))
    r = smap.r
    phi_t, psi_t = tilde_functions(smap, t, n, x)
    lhs_phi = phi_fn(smap, tau, n, u)
    rhs_phi = math.exp(-r * r / 2.0 - (x - r) ** 2 / (2.0 * (1.0 - t))) * phi_t
    lhs_psi = psi_fn(smap, tau, n, u)
    rhs_psi = math.exp(r * r / 2.0 + (x - r) ** 2 / (2.0 * (1.0 - t))) * psi_t
    tau_b = tau2 if tau2 is not None else 2.0 * tau + 0.25
    t_b = ScalingMap.t_from_tau(tau_b)
    u_b = u - 0.3
    y = float(smap.x_from_u(t_b, u_b))
    lhs_t = float(specfun.reflected_kernel(tau, tau_b, u, u_b))
    rhs_t = (math.sqrt(2.0 * (1.0 - t) * (1.0 - t_b))
             * math.exp((x - r) ** 2 / (2.0 * (1.0 - t)) - (y - r) ** 2 / (2.0 * (1.0 - t_b)))
             * tilde_transition(smap, t, t_b, x, y))
    out = 0.0
    for lhs, rhs in ((lhs_phi, rhs_phi), (lhs_psi, rhs_psi), (lhs_t, rhs_t)):
        scale = max(abs(lhs), abs(rhs), 1e-280)
        out = max(out, abs(lhs - rhs) / scale)
    return out


# ---------------------------------------------------------------------------
# barrier operators
# ---------------------------------------------------------------------------


def linear_barrier_kernel(dtau, u, v, level_a, level_b):
    """Transition density below a straight barrier for diffusion coeff. 2.

    Density at v of the motion started at u, over a tau-interval dtau with
    the barrier moving linearly from level_a to level_b; the Gaussian times
    the bridge non-crossing factor 1 - exp(-(la-u)(lb-v)/dtau).  Vanishes
    unless u < level_a and v < level_b.
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    gap_a = level_a - u
    gap_b = level_b - v
    with np.errstate(under="ignore"):
        base = specfun.heat_kernel(2.0 * dtau, v - u)
        factor = -np.expm1(-gap_a * gap_b / dtau)
    out = np.where((gap_a > 0.0) & (gap_b > 0.0), base * factor, 0.0)
    return float(out) if out.ndim == 0 else out


def _chain_event_times(profile: ThresholdProfile, smap: ScalingMap):
    """Barrier events as (tau, kind, payload) in bridge coordinates."""
    if profile.kind == "points":
        return [(smap.tau(t), smap.eta(t, h)) for t, h in profile.points]
    events = []
    for (ta, tb, h) in profile.segments:
        tau_a, tau_b = smap.tau(ta), smap.tau(tb)
        la = (1.0 + 4.0 * tau_a) * (h - smap.r) / math.sqrt(2.0)
        lb = (1.0 + 4.0 * tau_b) * (h - smap.r) / math.sqrt(2.0)
        events.append((tau_a, tau_b, la, lb))
    return events


def barrier_operator(smap: ScalingMap, profile: ThresholdProfile,
                     tau1: float, tau2: float,
                     rule_in: QuadratureRule, rule_out: QuadratureRule,
                     inner_nodes: int = 80) -> DiscretizedOperator:
    """Discretized constrained transition operator between tau1 and tau2.

    The constraint support of the profile must be bracketed by [tau1, tau2];
    outside the support the motion is simply killed at 0.  Interior
    projections get dedicated Gauss panels on their clipped windows, so no
    indicator kink ever lands inside a panel.
    """
    if not tau1 < tau2:
        raise ValueError("need tau1 < tau2")
    if abs(profile.r - smap.r) > 1e-12:
        raise ValueError("profile level differs from the scaling map level")
    L = -float(rule_in.a)
    u_in = rule_in.nodes
    row_mask = np.ones(u_in.size)

    if profile.kind == "constant":
        mat = specfun.reflected_kernel(tau1, tau2, u_in[:, None], rule_out.nodes[None, :])
        return DiscretizedOperator(mat, rule_in, rule_out, label="T^r")

    if profile.kind == "points":
        events = _chain_event_times(profile, smap)
        if events[0][0] < tau1 - 1e-12 or events[-1][0] > tau2 + 1e-12:
            raise ValueError("constraint times not bracketed by [tau1, tau2]")
        mat = None
        cur_tau = tau1
        cur_rule = rule_in
        for i, (tau_c, eta) in enumerate(events):
            last = i == len(events) - 1
            if tau_c <= cur_tau + 1e-14:
                # projection acting directly on the input variable
                row_mask = row_mask * (u_in < eta)
                cur_tau = tau_c
                continue
            if last and tau_c >= tau2 - 1e-14:
                target_rule = rule_out
                prop = specfun.reflected_kernel(cur_tau, tau_c, cur_rule.nodes[:, None],
                                                target_rule.nodes[None, :])
                prop = prop * (target_rule.nodes[None, :] < eta)
            else:
                hi = min(eta, 0.0)
                if hi <= -L + 1e-9:
                    raise ValueError("truncation depth too small for constraint level")
                target_rule = gauss_legendre(-L, hi, inner_nodes)
                prop = specfun.reflected_kernel(cur_tau, tau_c, cur_rule.nodes[:, None],
                                                target_rule.nodes[None, :])
            mat = prop if mat is None else mat @ (cur_rule.weights[:, None] * prop)
            cur_rule = target_rule
            cur_tau = tau_c
        if cur_tau < tau2 - 1e-14:
            prop = specfun.reflected_kernel(cur_tau, tau2, cur_rule.nodes[:, None],
                                            rule_out.nodes[None, :])
            mat = prop if mat is None else mat @ (cur_rule.weights[:, None] * prop)
        elif mat is None:
            # single projection exactly at tau1 == tau2 is not a propagation
            raise ValueError("degenerate bracket: tau1 == tau2")
        return DiscretizedOperator(row_mask[:, None] * mat, rule_in, rule_out, label="T^h")

    # piecewise-constant profile
    segs = _chain_event_times(profile, smap)
    if segs[0][0] < tau1 - 1e-12 or segs[-1][1] > tau2 + 1e-12:
        raise ValueError("segment support not bracketed by [tau1, tau2]")
    mat = None
    cur_tau = tau1
    cur_rule = rule_in
    for i, (tau_a, tau_b, la, lb) in enumerate(segs):
        if tau_a > cur_tau + 1e-14:
            # free (killed at 0) stretch, then enter the segment window
            hi = min(la, 0.0)
            if hi <= -L + 1e-9:
                raise ValueError("truncation depth too small for barrier level")
            target_rule = gauss_legendre(-L, hi, inner_nodes)
            prop = specfun.reflected_kernel(cur_tau, tau_a, cur_rule.nodes[:, None],
                                            target_rule.nodes[None, :])
            mat = prop if mat is None else mat @ (cur_rule.weights[:, None] * prop)
            cur_rule = target_rule
        elif mat is None:
            row_mask = row_mask * (u_in < la)
        last = i == len(segs) - 1
        if last and abs(tau_b - tau2) <= 1e-12:
            target_rule = rule_out
            seg = linear_barrier_kernel(tau_b - tau_a, cur_rule.nodes[:, None],
                                        target_rule.nodes[None, :], la, lb)
        else:
            nxt = min(lb, 0.0) if last else min(lb, segs[i + 1][2], 0.0)
            if nxt <= -L + 1e-9:
                raise ValueError("truncation depth too small for barrier level")
            target_rule = gauss_legendre(-L, nxt, inner_nodes)
            seg = linear_barrier_kernel(tau_b - tau_a, cur_rule.nodes[:, None],
                                        target_rule.nodes[None, :], la, lb)
        mat = seg if mat is None else mat @ (cur_rule.weights[:, None] * seg)
        cur_rule = target_rule
        cur_tau = tau_b
    if cur_tau < tau2 - 1e-12:
        prop = specfun.reflected_kernel(cur_tau, tau2, cur_rule.nodes[:, None],
                                        rule_out.nodes[None, :])
        mat = mat @ (cur_rule.weights[:, None] * prop)
    return DiscretizedOperator(row_mask[:, None] * mat, rule_in, rule_out, label="T^h")
