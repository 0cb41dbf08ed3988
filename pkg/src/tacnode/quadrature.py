"""Quadrature rules and Nystrom discretizations of integral operators."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal, lu_factor, lu_solve

from . import specfun


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes and positive weights discretizing ``[a, b]``.

    A rule may be a single Gauss panel or a concatenation of panels (nodes
    stay ordered); ``sum(weights) == b - a`` either way.
    """

    a: float
    b: float
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if self.nodes.shape != self.weights.shape or self.nodes.ndim != 1:
            raise ValueError("nodes and weights must be 1-d and congruent")
        if np.any(self.weights <= 0.0):
            raise ValueError("weights must be positive")

    def __len__(self):
        return self.nodes.size

    @property
    def sqrt_weights(self) -> np.ndarray:
        return np.sqrt(self.weights)

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))

    def same_as(self, other: "QuadratureRule") -> bool:
        return (
            len(self) == len(other)
            and np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.weights, other.weights)
        )


def gauss_legendre(a: float, b: float, m: int) -> QuadratureRule:
    """m-node Gauss-Legendre rule on [a, b] via the Golub-Welsch eigenproblem."""
    if not a < b:
        raise ValueError("need a < b")
    if m < 1:
        raise ValueError("need m >= 1")
    if m == 1:
        x = np.array([0.0])
        w = np.array([2.0])
    else:
        k = np.arange(1, m, dtype=float)
        beta = k / np.sqrt(4.0 * k * k - 1.0)
        x, vecs = eigh_tridiagonal(np.zeros(m), beta)
        w = 2.0 * vecs[0] ** 2
    half = 0.5 * (b - a)
    return QuadratureRule(a, b, a + half * (x + 1.0), half * w)


def gauss_legendre_panels(breakpoints, m: int) -> QuadratureRule:
    """Concatenated Gauss-Legendre panels between consecutive breakpoints.

    Splitting at interior kinks (projection levels, barrier junctions)
    restores spectral convergence for piecewise-smooth kernels.
    """
    pts = [float(p) for p in breakpoints]
    if len(pts) < 2 or any(q <= p for p, q in zip(pts, pts[1:])):
        raise ValueError("breakpoints must be strictly increasing, >= 2 of them")
    rules = [gauss_legendre(p, q, m) for p, q in zip(pts, pts[1:])]
    nodes = np.concatenate([r.nodes for r in rules])
    weights = np.concatenate([r.weights for r in rules])
    return QuadratureRule(pts[0], pts[-1], nodes, weights)


def gauss_hermite_lebesgue(m: int) -> QuadratureRule:
    """m-node rule for plain Lebesgue integrals of Gaussian-weighted smooth
    functions on the whole line (Gauss-Hermite nodes, Christoffel weights).

    Exact for ``p(x) exp(-x^2)`` with p of degree <= 2m-1.  Total weights are
    computed through the Christoffel function of the orthonormal oscillator
    basis, which stays finite where ``exp(x_i^2)`` would overflow.
    """
    k = np.arange(1, m, dtype=float)
    x, _ = eigh_tridiagonal(np.zeros(m), np.sqrt(k / 2.0))
    mant, expo = specfun.harmonic_oscillator_all_scaled(m - 1, x)
    # lambda_i = 1 / sum_{k<m} phi_k(x_i)^2; dominated by k near m-1, so the
    # underflow of low-k terms at the outer nodes is harmless (m <= ~700)
    vals = np.ldexp(mant, expo.astype(np.int32))
    dens = np.sum(vals * vals, axis=0)
    return QuadratureRule(float(x[0]), float(x[-1]), x, 1.0 / dens)


@dataclass(frozen=True)
class DiscretizedOperator:
    """A kernel matrix together with the rules of its row/column spaces."""

    matrix: np.ndarray
    row_rule: QuadratureRule
    col_rule: QuadratureRule
    label: str = ""

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", m)
        if m.shape != (len(self.row_rule), len(self.col_rule)):
            raise ValueError(
                f"matrix shape {m.shape} does not match rules "
                f"({len(self.row_rule)}, {len(self.col_rule)})"
            )

    def compose(self, other: "DiscretizedOperator") -> "DiscretizedOperator":
        """Operator product; the shared inner rule supplies the integration."""
        if not self.col_rule.same_as(other.row_rule):
            raise ValueError("inner quadrature rules differ; cannot compose")
        m = self.matrix @ (other.matrix * other.row_rule.weights[:, None])
        return DiscretizedOperator(m, self.row_rule, other.col_rule,
                                   label=f"{self.label}*{other.label}")

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ (self.col_rule.weights * values)


def nystrom_det(op) -> float:
    """``det(I - W^(1/2) K W^(1/2))`` for a square discretized operator.

    The symmetric weighting makes the value independent of node ordering and
    as well conditioned as the kernel allows.
    """
    if isinstance(op, DiscretizedOperator):
        if not op.row_rule.same_as(op.col_rule):
            raise ValueError("determinant needs a square operator (equal rules)")
        k = op.matrix
        sw = op.row_rule.sqrt_weights
    else:
        k, rule = op
        k = np.asarray(k, dtype=float)
        sw = rule.sqrt_weights
    a = np.eye(k.shape[0]) - sw[:, None] * k * sw[None, :]
    sign, logabs = np.linalg.slogdet(a)
    if sign == 0.0:
        return 0.0
    return float(sign * math.exp(logabs)) if logabs < 700.0 else float(sign * math.inf)


def resolvent_factor(kernel_matrix: np.ndarray, rule: QuadratureRule):
    """LU factorization of ``I - W^(1/2) K W^(1/2)`` for resolvent solves."""
    sw = rule.sqrt_weights
    a = np.eye(len(rule)) - sw[:, None] * kernel_matrix * sw[None, :]
    return lu_factor(a)


def resolvent_quadform(lu, rule: QuadratureRule, left: np.ndarray, right: np.ndarray):
    """Bilinear forms ``<left_i, (I - K)^-1 right_j>`` under the rule.

    ``left`` and ``right`` hold function samples on the rule nodes, one
    function per column; returns the matrix of all pairings.
    """
    sw = rule.sqrt_weights
    sol = lu_solve(lu, sw[:, None] * right)
    return (sw[:, None] * left).T @ sol
