import math

import numpy as np
import pytest

from pinchtwist.cocycle import (
    SpectrumEstimate,
    birkhoff_log_det,
    bunching_constant,
    check_fiber_bunched,
    constant_cocycle,
    iterate,
    lyapunov_spectrum_qr,
    spectrum_ensemble,
    spectrum_gap_report,
)
from pinchtwist.errors import Overflow

from oracles import quadratic_roots, rotation

CAT = np.array([[2.0, 1.0], [1.0, 1.0]])


def est(ex, se):
    return SpectrumEstimate(np.array(ex), np.array(se), 10**5, 1, 0)


class TestIterate:
    def test_constant_power(self):
        A = np.array([[1.0, 2.0], [0.5, 3.0]])
        np.testing.assert_allclose(iterate(constant_cocycle(A), 0, 3), A @ A @ A)

    def test_zero(self):
        np.testing.assert_array_equal(iterate(constant_cocycle(CAT), 0, 0), np.eye(2))

    def test_negative(self):
        np.testing.assert_allclose(iterate(constant_cocycle(CAT), 0, -2) @ (CAT @ CAT),
                                   np.eye(2), atol=1e-12)

    def test_overflow(self):
        with pytest.raises(Overflow):
            iterate(constant_cocycle(np.diag([1e10, 1e-10])), 0, 40)


class TestSpectrum:
    def test_constant_diagonal(self):
        e = lyapunov_spectrum_qr(constant_cocycle(np.diag([3.0, 1 / 3])), 0, 10**4)
        np.testing.assert_allclose(e.exponents, [math.log(3), -math.log(3)], atol=1e-12)

    def test_cat_constant(self):
        big, _ = quadratic_roots(-3.0, 1.0)
        e = lyapunov_spectrum_qr(constant_cocycle(CAT), 0, 10**5)
        np.testing.assert_allclose(e.exponents, [math.log(big), -math.log(big)], atol=1e-6)
        assert abs(math.log(big) - 0.9624237) < 1e-7

    def test_constant_matches_eigen_log_moduli(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            A = rng.standard_normal((3, 3))
            e = lyapunov_spectrum_qr(constant_cocycle(A), 0, 10**5)
            ref = np.sort(np.log(np.abs(np.linalg.eigvals(A))))[::-1]
            np.testing.assert_allclose(e.exponents, ref, atol=1e-4)

    def test_renorm_period_agrees(self):
        A = np.array([[1.2, 0.3], [0.1, 0.9]])
        e1 = lyapunov_spectrum_qr(constant_cocycle(A), 0, 10**4, k=1)
        e5 = lyapunov_spectrum_qr(constant_cocycle(A), 0, 10**4, k=7)
        np.testing.assert_allclose(e1.exponents, e5.exponents, atol=1e-10)

    def test_determinism(self):
        sys = constant_cocycle(np.array([[1.2, 0.3], [0.1, 0.9]]))
        a = lyapunov_spectrum_qr(sys, 0, 5000, seed=3)
        b = lyapunov_spectrum_qr(sys, 0, 5000, seed=3)
        assert a.exponents.tobytes() == b.exponents.tobytes()
        assert a.std_errors.tobytes() == b.std_errors.tobytes()

    def test_too_few_steps(self):
        with pytest.raises(ValueError):
            lyapunov_spectrum_qr(constant_cocycle(CAT), 0, 10)

    def test_ensemble_thread_independent(self):
        sys = constant_cocycle(CAT)
        a = spectrum_ensemble(sys, 2000, orbits=4, threads=1, seed=1)
        b = spectrum_ensemble(sys, 2000, orbits=4, threads=4, seed=1)
        assert a.exponents.tobytes() == b.exponents.tobytes()


class TestGapReport:
    def test_simple(self):
        r = spectrum_gap_report(est([1.0, -1.0], [1e-4, 1e-4]), gap_tol=1e-3)
        assert r.simple is True and r.multiplicities == [1, 1]

    def test_unresolved_tie(self):
        r = spectrum_gap_report(est([0.5, 0.5 - 1e-9], [1e-4, 1e-4]), gap_tol=1e-12)
        assert r.simple == "not_decided"

    def test_confident_tie(self):
        r = spectrum_gap_report(est([0.5, 0.5, -1.0], [1e-6] * 3), gap_tol=1e-3)
        assert r.simple is False and r.multiplicities == [2, 1]


class TestBunching:
    def test_scalar(self):
        c, curve = bunching_constant(constant_cocycle(np.array([[2.5]])), 40, sample_count=1)
        assert abs(c) < 1e-8 and np.all(np.abs(curve) < 1e-12)

    def test_diagonal(self):
        l1, l2 = 3.0, 1.5
        c, _ = bunching_constant(constant_cocycle(np.diag([l1, l2])), 40, sample_count=1)
        assert abs(c - math.log(l1 / l2)) < 1e-6

    def test_conformal(self):
        sys = constant_cocycle(2.0 * rotation(0.7))
        fit = check_fiber_bunched(sys, chi=0.5, N=20, sample_count=1)
        assert fit.ok and fit.fitted_lambda == pytest.approx(math.exp(-0.5), rel=1e-9)

    @pytest.mark.parametrize("ratio,chi,expected", [(1.5, 0.5, True), (2.0, 0.5, False),
                                                     (3.0, 1.2, True), (3.0, 1.0, False)])
    def test_diagonal_threshold(self, ratio, chi, expected):
        sys = constant_cocycle(np.diag([ratio * 1.1, 1.1]))
        fit = check_fiber_bunched(sys, chi=chi, N=20, sample_count=1)
        assert fit.ok is expected
        assert fit.fitted_lambda == pytest.approx(ratio * math.exp(-chi), rel=1e-8)


def test_sum_rule_constant():
    A = np.array([[2.0, 1.0], [0.5, 1.5]])
    e = lyapunov_spectrum_qr(constant_cocycle(A), 0, 10**4)
    assert e.exponents.sum() == pytest.approx(birkhoff_log_det(constant_cocycle(A), 0, 100))
