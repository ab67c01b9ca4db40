"""Fractional integration matrices on the uniform grid of [0, 1].

A fractional integration matrix W of order ``alpha`` maps samples
``y = (y(tau_0), ..., y(tau_n))`` on the grid ``tau_i = i/n`` to
approximations of the left Riemann-Liouville integral

    (I^alpha y)(tau_i) = 1/Gamma(alpha) * int_0^tau_i (tau_i - s)^(alpha-1) y(s) ds

at every node at once.  Row 0 is identically zero because the integral
vanishes at the left endpoint.  Three schemes are provided:

``gl``
    Grunwald-Letnikov binomial weights ``w_k = (-1)^k C(-alpha, k) h^alpha``
    with ``W[i, j] = w_{i-1-j}`` for ``j < i``.  First-order accurate; at
    alpha = 1 it reduces exactly to left-Riemann cumulative sums.

``tr``
    Exact fractional integration of the piecewise-linear interpolant.
    Row i is ``[a_i, b_{i-1}, ..., b_1, b_0]``.  Second-order accurate
    and exact on affine functions; at alpha = 1 it reduces to cumulative
    composite-trapezoid integration.

``si``
    Exact fractional integration of the piecewise-quadratic interpolant
    over pairs of intervals (n must be even).  Odd rows pick up a single
    superdiagonal entry mu_1 from the half panel that straddles the
    node.  Exact on quadratics; observed order 3 + alpha on smooth
    integrands.

All entries scale as ``h^alpha`` with ``h = 1/n``; problems on [0, t_f]
are handled upstream by rescaling time rather than by changing the grid
(see :mod:`focp.problem`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import _kernels
from .errors import ParameterDomainError, SchemeConstraintError

__all__ = [
    "Scheme",
    "FracIntegrationMatrix",
    "QuadratureWeights",
    "gl_weights",
    "gl_matrix",
    "tr_coeffs",
    "tr_matrix",
    "si_coeffs",
    "si_matrix",
    "build_matrix",
    "apply",
    "quad_weights",
    "write_matrix_csv",
    "USING_NUMBA",
]

USING_NUMBA = _kernels.USING_NUMBA

#: Matrix entries are formatted with 17 significant digits so a round
#: trip through text reproduces the double exactly.
_CSV_FMT = "%.17g"


class Scheme(Enum):
    """The three discretizations of the fractional integral."""

    GL = "gl"
    TR = "tr"
    SI = "si"

    @classmethod
    def coerce(cls, value) -> "Scheme":
        """Accept a Scheme, its name or its value, case-insensitively."""
        if isinstance(value, cls):
            return value
        if isinstance(value, str):
            try:
                return cls(value.strip().lower())
            except ValueError:
                pass
        raise ParameterDomainError(f"unknown scheme {value!r}; expected one of gl, tr, si")

    @property
    def needs_even_n(self) -> bool:
        """Simpson panels span two intervals, so ``si`` needs even n."""
        return self is Scheme.SI


def _check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not np.isfinite(alpha) or not 0.0 < alpha <= 1.0:
        raise ParameterDomainError(f"fractional order alpha must lie in (0, 1], got {alpha!r}")
    return alpha


def _check_n(n: int, scheme: Scheme | None = None) -> int:
    if n != int(n) or int(n) < 1:
        raise ParameterDomainError(f"grid size n must be a positive integer, got {n!r}")
    n = int(n)
    if scheme is not None and scheme.needs_even_n and n % 2 != 0:
        raise SchemeConstraintError(f"simpson requires even n, got {n}")
    return n


def _check_h(h: float) -> float:
    h = float(h)
    if not np.isfinite(h) or h <= 0.0:
        raise ParameterDomainError(f"step size h must be positive, got {h!r}")
    return h


@dataclass(frozen=True)
class FracIntegrationMatrix:
    """A dense (n+1) x (n+1) fractional integration operator.

    Attributes
    ----------
    scheme : Scheme
        Which discretization built the matrix.
    alpha : float
        Fractional order in (0, 1].
    n : int
        Number of grid intervals; the grid is tau_i = i/n.
    values : ndarray
        The dense operator, lower triangular for gl/tr; si rows may
        carry one superdiagonal entry.
    """

    scheme: Scheme
    alpha: float
    n: int
    values: np.ndarray = field(repr=False)

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.n + 1) / self.n

    def apply(self, y: np.ndarray) -> np.ndarray:
        """Nodal values of the approximate fractional integral of y."""
        return apply(self, y)

    def to_csv(self, path) -> None:
        write_matrix_csv(self, path)


def gl_weights(alpha: float, h: float, n: int) -> np.ndarray:
    """Grunwald-Letnikov weights w_0..w_n for order alpha and step h.

    w_k = (-1)^k * C(-alpha, k) * h^alpha, computed by the stable
    recurrence w_0 = h^alpha, w_k = w_{k-1} * (k - 1 + alpha) / k.
    All weights are positive and, for alpha < 1, strictly decreasing
    from k = 1 on.
    """
    alpha = _check_alpha(alpha)
    h = _check_h(h)
    n = _check_n(n)
    return _kernels.gl_weights(alpha, h, n)


def tr_coeffs(alpha: float, h: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Trapezoid-scheme coefficients (a_bar, b_bar), each of length n + 1.

    With c = h^alpha / Gamma(alpha + 2):

        a_bar_k = c * ((k-1)^(alpha+1) - (k-1-alpha) k^alpha)   (k >= 1)
        b_bar_0 = c
        b_bar_k = c * ((k+1)^(alpha+1) + (k-1)^(alpha+1) - 2 k^(alpha+1))

    a_bar_0 is zero by convention (row 0 of the matrix is zero).
    """
    alpha = _check_alpha(alpha)
    h = _check_h(h)
    n = _check_n(n)
    return _kernels.tr_coeffs(alpha, h, n)


def si_coeffs(alpha: float, h: float, n: int):
    """Simpson-scheme coefficient families (gamma, theta, mu), length n + 1.

    Entry k = 0 is zero in all three arrays.  gamma_k weights the
    left-endpoint column, theta_k the odd columns and mu_k the even
    columns of the matrix; see :func:`si_matrix` for the placement rule.
    """
    alpha = _check_alpha(alpha)
    h = _check_h(h)
    n = _check_n(n, Scheme.SI)
    return _kernels.si_coeffs(alpha, h, n)


def gl_matrix(alpha: float, n: int) -> FracIntegrationMatrix:
    """Grunwald-Letnikov fractional integration matrix on tau_i = i/n.

    Row 0 is zero; row i holds the reversed weight window
    ``[w_{i-1}, ..., w_0]`` in columns 0..i-1, so node i integrates the
    samples strictly to its left.  At alpha = 1 the matrix reproduces
    left-Riemann cumulative sums exactly.
    """
    alpha = _check_alpha(alpha)
    n = _check_n(n)
    w = _kernels.gl_weights(alpha, 1.0 / n, n)
    return FracIntegrationMatrix(Scheme.GL, alpha, n, _kernels.gl_fill(w))


def tr_matrix(alpha: float, n: int) -> FracIntegrationMatrix:
    """Fractional trapezoid integration matrix on tau_i = i/n.

    Row i is ``[a_bar_i, b_bar_{i-1}, ..., b_bar_0]``; exact for affine
    integrands at every alpha, and the cumulative composite trapezoid
    rule at alpha = 1.
    """
    alpha = _check_alpha(alpha)
    n = _check_n(n)
    a_bar, b_bar = _kernels.tr_coeffs(alpha, 1.0 / n, n)
    return FracIntegrationMatrix(Scheme.TR, alpha, n, _kernels.tr_fill(a_bar, b_bar))


def si_matrix(alpha: float, n: int) -> FracIntegrationMatrix:
    """Fractional Simpson integration matrix on tau_i = i/n (even n).

    Row i holds gamma_i in column 0, theta_{i-j+1} in odd columns j and
    mu_{i-j+2} in even columns j >= 2, with coefficients of index k <= 0
    dropped.  Odd rows therefore end with the single superdiagonal
    entry mu_1: the quadratic panel straddling an odd node is integrated
    only up to that node.  Exact for quadratic integrands.
    """
    alpha = _check_alpha(alpha)
    n = _check_n(n, Scheme.SI)
    gam, the, mu = _kernels.si_coeffs(alpha, 1.0 / n, n)
    return FracIntegrationMatrix(Scheme.SI, alpha, n, _kernels.si_fill(gam, the, mu))


_BUILDERS = {Scheme.GL: gl_matrix, Scheme.TR: tr_matrix, Scheme.SI: si_matrix}


def build_matrix(scheme, alpha: float, n: int) -> FracIntegrationMatrix:
    """Build the integration matrix for any scheme name or member."""
    return _BUILDERS[Scheme.coerce(scheme)](alpha, n)


def apply(matrix: FracIntegrationMatrix, y: np.ndarray) -> np.ndarray:
    """Apply an integration matrix to nodal samples.

    ``y`` may be a vector of n+1 samples or an (n+1, m) array of m
    stacked sample columns; the result has the same shape.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != matrix.n + 1:
        raise ParameterDomainError(
            f"expected {matrix.n + 1} samples on the grid, got {y.shape[0]}"
        )
    return matrix.values @ y


@dataclass(frozen=True)
class QuadratureWeights:
    """Nodal weights of a composite quadrature rule on [0, 1]."""

    scheme: Scheme
    n: int
    values: np.ndarray = field(repr=False)

    def integrate(self, y: np.ndarray) -> float:
        return float(self.values @ np.asarray(y, dtype=np.float64))


def quad_weights(n: int, scheme) -> QuadratureWeights:
    """Composite quadrature weights pairing each scheme's cost integral.

    gl and tr use the composite trapezoid rule ``[h/2, h, ..., h, h/2]``;
    si uses composite Simpson ``[h/3, 4h/3, 2h/3, ..., 4h/3, h/3]`` and
    requires even n.  The weights sum to 1 exactly up to roundoff.
    """
    scheme = Scheme.coerce(scheme)
    n = _check_n(n, scheme)
    h = 1.0 / n
    if scheme is Scheme.SI:
        w = np.empty(n + 1, dtype=np.float64)
        w[0::2] = 2.0 * h / 3.0
        w[1::2] = 4.0 * h / 3.0
        w[0] = h / 3.0
        w[n] = h / 3.0
    else:
        w = np.full(n + 1, h, dtype=np.float64)
        w[0] = 0.5 * h
        w[n] = 0.5 * h
    return QuadratureWeights(scheme, n, w)


def write_matrix_csv(matrix: FracIntegrationMatrix, path) -> None:
    """Dump the dense operator to CSV with 17 significant digits.

    One row per matrix row, comma-separated, no header: the format is a
    debugging/interchange artifact and mirrors the CLI ``matrix``
    subcommand.
    """
    np.savetxt(path, matrix.values, fmt=_CSV_FMT, delimiter=",")
