"""Parity and dispatch tests for the accelerated kernels.

Every kernel ships in two forms: a pure-numpy reference and an
optionally JIT-compiled twin.  Whichever form is bound at import time
must be numerically identical to the reference, bit for bit where the
arithmetic allows it, because the two are meant to be interchangeable
under the ``FOCP_NO_NUMBA`` switch.
"""

import os
import subprocess
import sys

import numpy as np
import pytest

from focp import _kernels as K


ALPHAS = [0.2, 0.5, 0.8, 1.0]
SIZES = [1, 2, 5, 16, 64]


def _even(n):
    return n if n % 2 == 0 else n + 1


class TestSelectedMatchesReference:
    """The bound kernel must agree with the numpy reference.

    Both implementations run the same recurrences on float64; tiny
    bit-level differences are allowed only where the JIT reassociates
    a sum, so the comparison tolerance is a few ulp.
    """

    @pytest.mark.parametrize("alpha", ALPHAS)
    @pytest.mark.parametrize("n", SIZES)
    def test_gl_weights(self, alpha, n):
        ref = K.gl_weights_np(alpha, 1.0 / n, n)
        got = K.gl_weights(alpha, 1.0 / n, n)
        np.testing.assert_allclose(got, ref, rtol=1e-15, atol=0.0)

    @pytest.mark.parametrize("alpha", ALPHAS)
    @pytest.mark.parametrize("n", SIZES)
    def test_gl_fill(self, alpha, n):
        w = K.gl_weights_np(alpha, 1.0 / n, n)
        ref = K.gl_fill_np(w)
        got = K.gl_fill(w)
        np.testing.assert_array_equal(got, ref)

    @pytest.mark.parametrize("alpha", ALPHAS)
    @pytest.mark.parametrize("n", SIZES)
    def test_tr_coeffs(self, alpha, n):
        ref_a, ref_b = K.tr_coeffs_np(alpha, 1.0 / n, n)
        got_a, got_b = K.tr_coeffs(alpha, 1.0 / n, n)
        np.testing.assert_allclose(got_a, ref_a, rtol=1e-15, atol=0.0)
        np.testing.assert_allclose(got_b, ref_b, rtol=1e-15, atol=0.0)

    @pytest.mark.parametrize("alpha", ALPHAS)
    @pytest.mark.parametrize("n", SIZES)
    def test_tr_fill(self, alpha, n):
        a_bar, b_bar = K.tr_coeffs_np(alpha, 1.0 / n, n)
        ref = K.tr_fill_np(a_bar, b_bar)
        got = K.tr_fill(a_bar, b_bar)
        np.testing.assert_array_equal(got, ref)

    @pytest.mark.parametrize("alpha", ALPHAS)
    @pytest.mark.parametrize("n", [_even(n) for n in SIZES])
    def test_si_coeffs(self, alpha, n):
        """Agreement is asserted relative to the coefficient scale.

        The formulas subtract near-equal powers, so the sub-ulp gap
        between numpy's vectorized pow and the scalar libm pow the JIT
        calls is amplified in the small entries.  The difference stays
        at rounding level relative to the terms that cancelled.
        """
        ref = K.si_coeffs_np(alpha, 1.0 / n, n)
        got = K.si_coeffs(alpha, 1.0 / n, n)
        for r, g in zip(ref, got):
            scale = 1.0 + np.max(np.abs(r))
            assert np.max(np.abs(g - r)) <= 1e-12 * scale

    @pytest.mark.parametrize("alpha", ALPHAS)
    @pytest.mark.parametrize("n", [_even(n) for n in SIZES])
    def test_si_fill(self, alpha, n):
        gam, the, mu = K.si_coeffs_np(alpha, 1.0 / n, n)
        ref = K.si_fill_np(gam, the, mu)
        got = K.si_fill(gam, the, mu)
        np.testing.assert_array_equal(got, ref)


class TestDispatchFlags:
    def test_using_numba_consistent_with_bindings(self):
        """USING_NUMBA says which implementation the plain names hold."""
        if K.USING_NUMBA:
            assert K.gl_weights is not K.gl_weights_np
            assert K.tr_fill is not K.tr_fill_np
            assert K.si_coeffs is not K.si_coeffs_np
        else:
            assert K.gl_weights is K.gl_weights_np
            assert K.gl_fill is K.gl_fill_np
            assert K.tr_coeffs is K.tr_coeffs_np
            assert K.tr_fill is K.tr_fill_np
            assert K.si_coeffs is K.si_coeffs_np
            assert K.si_fill is K.si_fill_np

    def test_using_numba_requires_numba(self):
        assert not (K.USING_NUMBA and not K.HAS_NUMBA)

    def test_env_flag_disables_acceleration(self):
        """FOCP_NO_NUMBA=1 must force the numpy bindings in a fresh
        interpreter, regardless of whether numba is installed."""
        code = (
            "from focp import _kernels as K;"
            "assert not K.USING_NUMBA;"
            "assert K.gl_weights is K.gl_weights_np"
        )
        env = dict(os.environ, FOCP_NO_NUMBA="1")
        proc = subprocess.run(
            [sys.executable, "-c", code],
            env=env,
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr

    @pytest.mark.parametrize("value", ["true", "YES", "on"])
    def test_env_flag_spellings(self, value):
        code = "from focp import _kernels as K; assert not K.USING_NUMBA"
        env = dict(os.environ, FOCP_NO_NUMBA=value)
        proc = subprocess.run(
            [sys.executable, "-c", code],
            env=env,
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr

    def test_env_flag_off_values_keep_default(self):
        """Unrecognised values (and '0') leave the default dispatch."""
        code = (
            "from focp import _kernels as K;"
            "assert K.USING_NUMBA == K.HAS_NUMBA"
        )
        env = dict(os.environ, FOCP_NO_NUMBA="0")
        proc = subprocess.run(
            [sys.executable, "-c", code],
            env=env,
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr


def test_warmup_runs_and_is_idempotent():
    K.warmup()
    K.warmup()


def test_warmup_leaves_results_unchanged():
    before = K.gl_weights(0.5, 0.125, 8)
    K.warmup()
    after = K.gl_weights(0.5, 0.125, 8)
    np.testing.assert_array_equal(after, before)
