"""Low-level assembly kernels for the fractional integration matrices.

Every kernel exists twice: a vectorized pure-numpy version (suffix
``_np``) and a numba ``@njit`` version (suffix ``_nb``).  The module
selects one family at import time; set the environment variable
``FOCP_NO_NUMBA=1`` to force the numpy path even when numba is
installed.  ``benchmarks/benchmark_kernels.py`` times both families
side by side.

The selected implementations are exposed under the plain names
``gl_weights``, ``gl_fill``, ``tr_coeffs``, ``tr_fill``, ``si_coeffs``
and ``si_fill``.  All kernels work in float64 and assume their
arguments were validated by the caller (:mod:`focp.fracint`).
"""

from __future__ import annotations

import math
import os

import numpy as np

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAS_NUMBA = False

_DISABLED = os.environ.get("FOCP_NO_NUMBA", "").strip().lower() in {
    "1",
    "true",
    "yes",
    "on",
}

USING_NUMBA = HAS_NUMBA and not _DISABLED


# ---------------------------------------------------------------------------
# pure numpy implementations
# ---------------------------------------------------------------------------


def gl_weights_np(alpha: float, h: float, n: int) -> np.ndarray:
    """Binomial weights w_k = (-1)^k C(-alpha, k) h^alpha for k = 0..n.

    Uses the stable product form w_k = w_{k-1} (k - 1 + alpha) / k,
    cast as a cumulative product so no Python loop runs.
    """
    k = np.arange(1, n + 1, dtype=np.float64)
    out = np.empty(n + 1, dtype=np.float64)
    out[0] = h**alpha
    if n:
        out[1:] = out[0] * np.cumprod((k - 1.0 + alpha) / k)
    return out


def gl_fill_np(w: np.ndarray) -> np.ndarray:
    """Strictly lower triangular matrix with W[i, j] = w[i-1-j] for j < i."""
    n = w.shape[0] - 1
    idx = np.arange(n + 1)
    d = idx[:, None] - idx[None, :]  # d = i - j
    W = np.where(d >= 1, w[np.clip(d - 1, 0, n)], 0.0)
    return np.ascontiguousarray(W)


def tr_coeffs_np(alpha: float, h: float, n: int) -> tuple[np.ndarray, np.ndarray]:
    """First-column and Toeplitz coefficient families of the trapezoid scheme."""
    pref = h**alpha / math.gamma(alpha + 2.0)
    k = np.arange(n + 1, dtype=np.float64)
    a_bar = np.zeros(n + 1, dtype=np.float64)
    b_bar = np.empty(n + 1, dtype=np.float64)
    if n:
        kk = k[1:]
        a_bar[1:] = pref * ((kk - 1.0) ** (alpha + 1.0) - (kk - 1.0 - alpha) * kk**alpha)
        b_bar[1:] = pref * (
            (kk + 1.0) ** (alpha + 1.0)
            + (kk - 1.0) ** (alpha + 1.0)
            - 2.0 * kk ** (alpha + 1.0)
        )
    b_bar[0] = pref
    return a_bar, b_bar


def tr_fill_np(a_bar: np.ndarray, b_bar: np.ndarray) -> np.ndarray:
    """Rows [a_i, b_{i-1}, ..., b_1, b_0, 0, ...]; row 0 identically zero."""
    n = a_bar.shape[0] - 1
    idx = np.arange(n + 1)
    d = idx[:, None] - idx[None, :]
    W = np.where(d >= 0, b_bar[np.clip(d, 0, n)], 0.0)
    W[:, 0] = a_bar
    W[0, :] = 0.0
    return np.ascontiguousarray(W)


def _si_lambdas_np(alpha: float, k: np.ndarray):
    """The three quadratic-interpolant building blocks, vectorized over k >= 2."""
    a = alpha
    km2 = k - 2.0
    lam0 = 0.5 * (2.0 * a * a - (3.0 * k - 6.0) * a + 2.0 * k * k - 6.0 * k + 4.0) * k**a
    lam0 -= 0.5 * (2.0 * k + a - 2.0) * km2 ** (a + 1.0)
    lam1 = 2.0 * km2 ** (a + 1.0) * (k + a) - 2.0 * k ** (a + 1.0) * (k - a - 2.0)
    lam2 = 0.5 * k ** (a + 1.0) * (2.0 * k - a - 2.0)
    lam2 -= 0.5 * km2**a * (2.0 * k * k + (3.0 * a - 2.0) * k + 2.0 * a * a)
    return lam0, lam1, lam2


def si_coeffs_np(alpha: float, h: float, n: int):
    """Simpson-scheme coefficient families (gamma_k, theta_k, mu_k), k = 0..n.

    Index 0 is identically zero in all three arrays; the k <= 0 branch of
    the definition never produces a stored value.
    """
    a = alpha
    pref = h**alpha / math.gamma(alpha + 3.0)
    gam = np.zeros(n + 1, dtype=np.float64)
    the = np.zeros(n + 1, dtype=np.float64)
    mu = np.zeros(n + 1, dtype=np.float64)
    if n >= 1:
        gam[1] = 0.5 * (2.0 * a + 3.0) * a
        the[1] = 2.0 * a + 2.0
        mu[1] = -0.5 * a
    if n >= 2:
        k = np.arange(2, n + 1, dtype=np.float64)
        lam0, lam1, lam2 = _si_lambdas_np(a, k)
        gam[2:] = lam0
        the[2:] = lam1
        mu[2:] = lam2
        if n >= 3:
            mu[3] += 0.5 * (2.0 * a + 3.0) * a
        if n >= 4:
            mu[4:] += lam0[:-2]
    gam *= pref
    the *= pref
    mu *= pref
    return gam, the, mu


def si_fill_np(gam: np.ndarray, the: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """Row i: gamma_i at column 0, theta_{i-j+1} at odd j, mu_{i-j+2} at even j."""
    n = gam.shape[0] - 1
    idx = np.arange(n + 1)
    i = idx[:, None]
    j = idx[None, :]
    k_odd = i - j + 1
    k_even = i - j + 2
    odd = (j % 2) == 1
    W = np.zeros((n + 1, n + 1), dtype=np.float64)
    W += np.where(odd & (k_odd >= 1), the[np.clip(k_odd, 0, n)], 0.0)
    W += np.where(~odd & (j >= 1) & (k_even >= 1) & (k_even <= n), mu[np.clip(k_even, 0, n)], 0.0)
    W[:, 0] = gam
    W[0, :] = 0.0
    return np.ascontiguousarray(W)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @numba.njit(cache=True)
    def gl_weights_nb(alpha, h, n):  # pragma: no cover - numba path
        out = np.empty(n + 1, dtype=np.float64)
        out[0] = h**alpha
        for k in range(1, n + 1):
            out[k] = out[k - 1] * (k - 1.0 + alpha) / k
        return out

    @numba.njit(cache=True)
    def gl_fill_nb(w):  # pragma: no cover - numba path
        n = w.shape[0] - 1
        W = np.zeros((n + 1, n + 1), dtype=np.float64)
        for i in range(1, n + 1):
            for j in range(i):
                W[i, j] = w[i - 1 - j]
        return W

    @numba.njit(cache=True)
    def tr_coeffs_nb(alpha, h, n):  # pragma: no cover - numba path
        pref = h**alpha / math.gamma(alpha + 2.0)
        a_bar = np.zeros(n + 1, dtype=np.float64)
        b_bar = np.empty(n + 1, dtype=np.float64)
        b_bar[0] = pref
        for k in range(1, n + 1):
            kf = float(k)
            a_bar[k] = pref * ((kf - 1.0) ** (alpha + 1.0) - (kf - 1.0 - alpha) * kf**alpha)
            b_bar[k] = pref * (
                (kf + 1.0) ** (alpha + 1.0)
                + (kf - 1.0) ** (alpha + 1.0)
                - 2.0 * kf ** (alpha + 1.0)
            )
        return a_bar, b_bar

    @numba.njit(cache=True)
    def tr_fill_nb(a_bar, b_bar):  # pragma: no cover - numba path
        n = a_bar.shape[0] - 1
        W = np.zeros((n + 1, n + 1), dtype=np.float64)
        for i in range(1, n + 1):
            W[i, 0] = a_bar[i]
            for j in range(1, i + 1):
                W[i, j] = b_bar[i - j]
        return W

    @numba.njit(cache=True)
    def si_coeffs_nb(alpha, h, n):  # pragma: no cover - numba path
        a = alpha
        pref = h**alpha / math.gamma(alpha + 3.0)
        gam = np.zeros(n + 1, dtype=np.float64)
        the = np.zeros(n + 1, dtype=np.float64)
        mu = np.zeros(n + 1, dtype=np.float64)
        if n >= 1:
            gam[1] = 0.5 * (2.0 * a + 3.0) * a
            the[1] = 2.0 * a + 2.0
            mu[1] = -0.5 * a
        for k in range(2, n + 1):
            kf = float(k)
            km2 = kf - 2.0
            lam0 = 0.5 * (
                2.0 * a * a - (3.0 * kf - 6.0) * a + 2.0 * kf * kf - 6.0 * kf + 4.0
            ) * kf**a - 0.5 * (2.0 * kf + a - 2.0) * km2 ** (a + 1.0)
            lam1 = 2.0 * km2 ** (a + 1.0) * (kf + a) - 2.0 * kf ** (a + 1.0) * (kf - a - 2.0)
            lam2 = 0.5 * kf ** (a + 1.0) * (2.0 * kf - a - 2.0) - 0.5 * km2**a * (
                2.0 * kf * kf + (3.0 * a - 2.0) * kf + 2.0 * a * a
            )
            gam[k] = lam0
            the[k] = lam1
            mu[k] = lam2
        if n >= 3:
            mu[3] += 0.5 * (2.0 * a + 3.0) * a
        for k in range(4, n + 1):
            mu[k] += gam[k - 2]
        for k in range(n + 1):
            gam[k] *= pref
            the[k] *= pref
            mu[k] *= pref
        return gam, the, mu

    @numba.njit(cache=True)
    def si_fill_nb(gam, the, mu):  # pragma: no cover - numba path
        n = gam.shape[0] - 1
        W = np.zeros((n + 1, n + 1), dtype=np.float64)
        for i in range(1, n + 1):
            W[i, 0] = gam[i]
            for j in range(1, n + 1):
                if j % 2 == 1:
                    k = i - j + 1
                    if k >= 1:
                        W[i, j] = the[k]
                else:
                    k = i - j + 2
                    if k >= 1 and k <= n:
                        W[i, j] = mu[k]
        return W

else:  # pragma: no cover - exercised only without numba
    gl_weights_nb = None
    gl_fill_nb = None
    tr_coeffs_nb = None
    tr_fill_nb = None
    si_coeffs_nb = None
    si_fill_nb = None


if USING_NUMBA:
    gl_weights = gl_weights_nb
    gl_fill = gl_fill_nb
    tr_coeffs = tr_coeffs_nb
    tr_fill = tr_fill_nb
    si_coeffs = si_coeffs_nb
    si_fill = si_fill_nb
else:
    gl_weights = gl_weights_np
    gl_fill = gl_fill_np
    tr_coeffs = tr_coeffs_np
    tr_fill = tr_fill_np
    si_coeffs = si_coeffs_np
    si_fill = si_fill_np


def warmup() -> None:
    """Force JIT compilation of the numba kernels on tiny inputs."""
    if not USING_NUMBA:
        return
    w = gl_weights(0.5, 0.25, 4)
    gl_fill(w)
    a_bar, b_bar = tr_coeffs(0.5, 0.25, 4)
    tr_fill(a_bar, b_bar)
    gam, the, mu = si_coeffs(0.5, 0.25, 4)
    si_fill(gam, the, mu)
