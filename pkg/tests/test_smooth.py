import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pinchtwist.cocycle import iterate, lyapunov_spectrum_qr
from pinchtwist.errors import (
    DegeneratePeriod,
    InvalidLattice,
    NotHyperbolic,
    NotUnimodular,
    SupportViolation,
)
from pinchtwist.smooth import (
    CustomMap,
    check_clearance,
    derivative_cocycle,
    estimate_unstable_bundle,
    homoclinic_linear,
    leaf_pair,
    linear_anosov,
    map_from_dict,
    newton_refine_periodic,
    periodic_points_linear,
    perturb_local_rotation,
    product_map,
    restricted_cocycle,
    spectral_projector,
    standard_map,
    torus_distance,
    verify_partial_hyperbolicity,
    wrap,
)

from oracles import fd_jacobian, quadratic_roots, rotation

CAT = np.array([[2, 1], [1, 1]])
BIG, SMALL = quadratic_roots(-3.0, 1.0)


def t4_matrix():
    A = np.zeros((4, 4), dtype=int)
    A[:2, :2] = CAT @ CAT
    A[2:, 2:] = CAT
    return A


def unstable_plane(A):
    vals, V = np.linalg.eig(A.astype(float))
    return np.linalg.qr(V[:, np.abs(vals) > 1].real)[0]


def perturbed_t4(theta=0.3, radius=0.1):
    A = t4_matrix()
    h = homoclinic_linear(A, [1, 0, 0, 0])
    g = perturb_local_rotation(linear_anosov(A), h.point, unstable_plane(A), theta, radius)
    return A, h, g


def sample_maps():
    yield linear_anosov(CAT)
    yield standard_map(0.3)
    yield product_map(linear_anosov(CAT), standard_map(0.2))
    yield perturbed_t4()[2]


class TestConstructors:
    def test_cat_moduli(self):
        f = linear_anosov(CAT)
        ev = np.sort(np.abs(np.linalg.eigvals(f.matrix)))
        np.testing.assert_allclose(ev, [SMALL, BIG], atol=1e-12)
        assert abs(BIG - 2.618034) < 1e-6

    def test_t4_unstable_moduli(self):
        ev = np.sort(np.abs(np.linalg.eigvals(t4_matrix().astype(float))))[::-1]
        np.testing.assert_allclose(ev[:2], [BIG**2, BIG], atol=1e-12)
        assert abs(BIG**2 - 6.854102) < 1e-6

    def test_rotation_rejected(self):
        with pytest.raises(NotHyperbolic):
            linear_anosov([[0, -1], [1, 0]])

    def test_unimodular(self):
        with pytest.raises(NotUnimodular):
            linear_anosov([[2, 0], [0, 1]])

    def test_standard_derivative(self):
        np.testing.assert_array_equal(standard_map(0.0).derivative([0.3, 0.7]),
                                      [[1, 1], [0, 1]])
        c = 0.6 * math.pi
        np.testing.assert_allclose(standard_map(0.3).derivative([0.0, 0.0]),
                                   [[1, 1], [c, 1 + c]], rtol=1e-15)

    def test_product_linear(self):
        f = product_map(linear_anosov(CAT), linear_anosov(CAT))
        assert f.kind == "linear" and f.dim == 4

    def test_product_block_structure(self):
        f = product_map(linear_anosov(CAT), standard_map(0.0))
        P = iterate(derivative_cocycle(f), np.array([0.1, 0.2, 0.3, 0.4]), 5)
        assert np.all(P[:2, 2:] == 0) and np.all(P[2:, :2] == 0)


class TestMapInvariants:
    @pytest.mark.parametrize("f", list(sample_maps()), ids=lambda f: f.kind)
    def test_lift_compatibility(self, f):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            x = rng.random(f.dim)
            m = rng.integers(-3, 4, f.dim)
            lhs = f.lift(x + m)
            rhs = f.lift(x) + f.linear_part @ m
            assert np.abs(lhs - rhs).max() < 1e-10

    @pytest.mark.parametrize("f", list(sample_maps()), ids=lambda f: f.kind)
    def test_derivative_matches_finite_differences(self, f):
        rng = np.random.default_rng(1)
        for _ in range(100):
            x = rng.random(f.dim)
            assert np.abs(f.derivative(x) - fd_jacobian(f.lift, x)).max() < 1e-6

    @pytest.mark.parametrize("f", list(sample_maps()), ids=lambda f: f.kind)
    def test_volume(self, f):
        rng = np.random.default_rng(2)
        dets = [np.linalg.det(f.derivative(rng.random(f.dim))) for _ in range(1000)]
        assert np.abs(np.abs(dets) - 1).max() < 1e-8

    def test_standard_det_exact(self):
        rng = np.random.default_rng(3)
        g = standard_map(0.77)
        for _ in range(100):
            D = g.derivative(rng.random(2))
            # exact up to the rounding of 1 + c
            det = D[0, 0] * D[1, 1] - D[0, 1] * D[1, 0]
            assert abs(det - 1.0) <= 2 * np.finfo(float).eps * abs(D[1, 1])

    @pytest.mark.parametrize("f", list(sample_maps()), ids=lambda f: f.kind)
    def test_inverse_roundtrip(self, f):
        rng = np.random.default_rng(4)
        finv = f.inverse()
        for _ in range(200):
            x = rng.random(f.dim)
            assert torus_distance(finv.step(f.step(x)), x) < 1e-12
            np.testing.assert_allclose(finv.derivative(f.step(x)) @ f.derivative(x),
                                       np.eye(f.dim), atol=1e-9)

    @pytest.mark.parametrize("f", list(sample_maps()), ids=lambda f: f.kind)
    def test_fast_orbit_matches_step(self, f):
        x = np.random.default_rng(5).random(f.dim)
        mats, end = f.orbit_derivatives(x, 6)
        y = x
        for M in mats:
            np.testing.assert_allclose(M, f.derivative(y), atol=1e-10)
            y = f.step(y)
        assert torus_distance(end, y) < 1e-10

    def test_chain_rule(self):
        rng = np.random.default_rng(6)
        for f in (standard_map(0.4), perturbed_t4()[2]):
            coc = derivative_cocycle(f)
            for _ in range(10):
                x = rng.random(f.dim)
                n = int(rng.integers(1, 6))

                def fn(v, n=n):
                    for _ in range(n):
                        v = f.lift(v)
                    return v
                J = iterate(coc, x, n)
                scale = max(1.0, np.abs(J).max())
                assert np.abs(J - fd_jacobian(fn, x, 1e-7)).max() / scale < 1e-5

    def test_serialisation_roundtrip(self):
        for f in sample_maps():
            d = f.to_dict()
            assert map_from_dict(d).to_dict() == d


class TestPerturbation:
    def test_zero_angle_is_identity(self):
        A = t4_matrix()
        f = linear_anosov(A)
        g = perturb_local_rotation(f, [0.3] * 4, unstable_plane(A), 0.0, 0.1)
        x = np.random.default_rng(7).random((50, 4))
        for v in x:
            np.testing.assert_array_equal(g.lift(v), f.lift(v))
            np.testing.assert_array_equal(g.derivative(v), f.derivative(v))

    def test_derivative_at_centre(self):
        A, h, g = perturbed_t4(theta=0.3)
        P = unstable_plane(A)
        R = np.eye(4) + P @ (rotation(0.3) - np.eye(2)) @ P.T
        expected = A @ R
        fd = fd_jacobian(g.lift, h.point, 1e-6)
        assert np.abs(fd - expected).max() < 1e-8 * 100  # fd truncation ~ h^2 * |D^3|
        np.testing.assert_allclose(g.derivative(h.point), expected, atol=1e-12)

    def test_twist_volume(self):
        _, h, g = perturbed_t4(theta=0.7)
        rng = np.random.default_rng(8)
        twist = lambda v: g._twist(v, 1)[0]
        for _ in range(1000):
            x = h.point + 0.1 * (2 * rng.random(4) - 1)
            assert abs(np.linalg.det(fd_jacobian(twist, x)) - 1) < 1e-8

    def test_outside_support(self):
        A, h, g = perturbed_t4()
        f = linear_anosov(A)
        x = np.mod(h.point + 0.2, 1.0)
        np.testing.assert_array_equal(g.lift(x), f.lift(x))

    def test_clearance(self):
        A, h, g = perturbed_t4()
        rot = g.rotations[0]
        assert check_clearance(rot, h, 200)
        assert check_clearance(rot, periodic_points_linear(A, 1)[0])
        with pytest.raises(SupportViolation):
            check_clearance(rot, np.array([h.point + 0.01]))

    def test_too_large_radius(self):
        with pytest.raises(ValueError):
            perturb_local_rotation(linear_anosov(CAT), [0.5, 0.5], np.eye(2), 0.1, 0.6)


class TestPeriodic:
    def test_cat_fixed(self):
        pts = periodic_points_linear(CAT, 1)
        assert len(pts) == 1 and np.all(pts[0].point == 0)
        assert pts[0].margin == pytest.approx(1 - SMALL)

    def test_cat_period_two(self):
        # det(A^2 - I) = det [[4,3],[3,1]] = -5
        pts = periodic_points_linear(CAT, 2)
        assert len(pts) == 5
        for p in pts:
            assert torus_distance(CAT @ (CAT @ p.point), p.point) < 1e-12
        assert len({tuple(np.round(p.point, 12)) for p in pts}) == 5

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_count_matches_trace_formula(self, n):
        # |det(A^n - I)| = L^n + L^-n - 2 for the cat map
        expected = round(BIG**n + BIG**-n - 2)
        assert len(periodic_points_linear(CAT, n)) == expected

    def test_degenerate(self):
        with pytest.raises(DegeneratePeriod):
            periodic_points_linear([[1, 1], [0, 1]], 1)

    def test_newton_exact_start(self):
        d = newton_refine_periodic(linear_anosov(CAT), [0.0, 0.0], 1)
        assert d.iterations == 1 and np.all(d.point == 0)

    def test_newton_perturbed_origin(self):
        _, _, g = perturbed_t4(theta=0.05)
        d = newton_refine_periodic(g, np.zeros(4), 1)
        assert torus_distance(d.point, np.zeros(4)) == 0.0

    def test_newton_synthetic(self):
        c = np.array([0.25, 0.25])
        A = CAT.astype(float)
        g = CustomMap(2, lambda x: A @ (x - c) + c + 0.05 * np.sin(2 * np.pi * (x - c)) ** 2,
                      lambda x: A + np.diag(0.1 * np.pi * np.sin(4 * np.pi * (x - c))),
                      None, CAT)
        d = newton_refine_periodic(g, [0.3, 0.2], 1)
        assert np.abs(d.point - c).max() < 1e-12


class TestHomoclinic:
    def test_cat_closed_form(self):
        # unstable eigenvector (1, L-2) of x^2-3x+1; P_u e1 = v (v.w)/(|v|^2) for symmetric A
        v = np.array([1.0, BIG - 2])
        expected = v * v[0] / (v @ v)
        h = homoclinic_linear(CAT, [1, 0])
        np.testing.assert_allclose(h.lift_u, expected, atol=1e-14)
        np.testing.assert_allclose(h.lift_u - h.lift_s, [1, 0], atol=1e-14)
        assert h.angle == pytest.approx(math.pi / 2)
        assert h.forward_ratio == pytest.approx(SMALL, rel=1e-6)

    def test_biasymptotic_high_precision(self):
        """Iterate z mod 1 at 60 digits: both half-orbits approach 0."""
        mpmath.mp.dps = 60
        L = (3 + mpmath.sqrt(5)) / 2
        v = mpmath.matrix([1, L - 2])
        z = v * (v[0] / (v[0] ** 2 + v[1] ** 2))
        A = mpmath.matrix([[2, 1], [1, 1]])
        Ainv = mpmath.matrix([[1, -1], [-1, 2]])
        h = homoclinic_linear(CAT, [1, 0])
        assert abs(float(z[0]) - h.point[0]) < 1e-15

        def torus_norm(x):
            return mpmath.sqrt(sum((c - mpmath.nint(c)) ** 2 for c in x))

        for M in (A, Ainv):
            x = z.copy()
            for n in range(30):
                x = M * x
                x = mpmath.matrix([c - mpmath.floor(c) for c in x])
            assert torus_norm(x) < 1e-8
        mpmath.mp.dps = 15

    def test_zero_rejected(self):
        with pytest.raises(InvalidLattice):
            homoclinic_linear(CAT, [0, 0])

    def test_t4_block(self):
        h = homoclinic_linear(t4_matrix(), [1, 0, 0, 0])
        assert np.all(h.point[2:] == 0)
        assert h.angle > 0
        assert h.forward_ratio == pytest.approx(SMALL**2, rel=0.1)

    def test_projectors(self):
        A = t4_matrix()
        Pu, Ps = spectral_projector(A, True), spectral_projector(A, False)
        np.testing.assert_allclose(Pu + Ps, np.eye(4), atol=1e-12)
        np.testing.assert_allclose(Pu @ Pu, Pu, atol=1e-12)
        np.testing.assert_allclose(A @ Pu, Pu @ A, atol=1e-12)


class TestBundles:
    def test_linear_eigenspace(self):
        A = t4_matrix()
        b = estimate_unstable_bundle(linear_anosov(A), np.random.default_rng(0).random(4), 2)
        P = unstable_plane(A)
        assert np.linalg.norm(b.frame - P @ (P.T @ b.frame), 2) < 1e-8
        np.testing.assert_allclose(b.frame.T @ b.frame, np.eye(2), atol=1e-14)

    def test_full_dimension(self):
        b = estimate_unstable_bundle(linear_anosov(CAT), [0.1, 0.2], 2)
        assert b.convergence_residual == 0.0
        np.testing.assert_allclose(b.frame.T @ b.frame, np.eye(2), atol=1e-14)

    def test_product_with_standard(self):
        f = product_map(linear_anosov(CAT), standard_map(0.1))
        b = estimate_unstable_bundle(f, np.random.default_rng(1).random(4), 1, 200)
        assert b.convergence_residual < 1e-8
        vs = np.array([1.0, SMALL - 2, 0, 0])
        assert abs(b.frame[:, 0] @ vs) / np.linalg.norm(vs) < 1e-6

    def test_equivariance(self):
        A, _, g = perturbed_t4()
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = rng.random(4)
            b0 = estimate_unstable_bundle(g, x, 2)
            b1 = estimate_unstable_bundle(g, g.step(x), 2)
            img = np.linalg.qr(g.derivative(x) @ b0.frame)[0]
            sine = np.linalg.norm(img - b1.frame @ (b1.frame.T @ img), 2)
            assert sine <= 10 * max(b0.convergence_residual, b1.convergence_residual, 1e-15)

    def test_restricted_linear_t4(self):
        coc = restricted_cocycle(linear_anosov(t4_matrix()), "uu", 2)
        e = lyapunov_spectrum_qr(coc, None, 20000, seed=1)
        np.testing.assert_allclose(e.exponents, [math.log(BIG**2), math.log(BIG)], atol=1e-4)

    def test_restricted_cat(self):
        coc = restricted_cocycle(linear_anosov(CAT), "uu", 1)
        e = lyapunov_spectrum_qr(coc, None, 5000)
        assert e.exponents[0] == pytest.approx(0.9624237, abs=1e-6)

    def test_ss_is_inverse_uu(self):
        f = linear_anosov(t4_matrix())
        ss = lyapunov_spectrum_qr(restricted_cocycle(f, "ss", 2), None, 2000, seed=2)
        uu = lyapunov_spectrum_qr(restricted_cocycle(f.inverse(), "uu", 2), None, 2000, seed=2)
        np.testing.assert_allclose(ss.exponents, -uu.exponents[::-1], atol=1e-6)

    def test_restricted_generator_matches_fast_path(self):
        _, _, g = perturbed_t4()
        coc = restricted_cocycle(g, "uu", 2)
        x = np.random.default_rng(3).random(4)
        slow = np.array([np.linalg.svd(iterate(coc, x, 8), compute_uv=False)])
        Rs, _ = coc.block(x, 8)
        P = np.eye(2)
        for R in Rs:
            P = R @ P
        np.testing.assert_allclose(np.linalg.svd(P, compute_uv=False), slow[0], rtol=1e-9)

    def test_restricted_matches_full_top_exponents(self):
        f = product_map(linear_anosov(CAT), standard_map(0.1))
        full = lyapunov_spectrum_qr(derivative_cocycle(f), None, 20000, seed=4)
        uu = lyapunov_spectrum_qr(restricted_cocycle(f, "uu", 1), None, 20000, seed=4)
        assert abs(uu.exponents[0] - full.exponents[0]) < 3 * np.hypot(
            uu.std_errors[0], full.std_errors[0]) + 1e-9


class TestPartialHyperbolicity:
    def test_cat_margins_are_gaps(self):
        ok, m = verify_partial_hyperbolicity(linear_anosov(CAT), (1, 1), sample_count=5)
        assert ok
        assert m["uu_expansion"] == pytest.approx(math.log(BIG))
        assert m["unstable_cone"] == pytest.approx(2 * math.log(BIG))

    def test_cat_times_standard(self):
        f = product_map(linear_anosov(CAT), standard_map(0.1))
        ok, m = verify_partial_hyperbolicity(f, (1, 1), sample_count=10)
        assert ok and all(v > 0 for v in m.values())

    def test_standard_no_splitting(self):
        assert verify_partial_hyperbolicity(standard_map(5.0), (0, 0))[0]
        assert not verify_partial_hyperbolicity(standard_map(5.0), (1, 0))[0]


class TestLeafPair:
    def test_linear_stable_leaf(self):
        f = linear_anosov(CAT)
        vs = np.array([1.0, SMALL - 2])
        y = np.array([0.3, 0.6])
        pair = leaf_pair(f, y, y + 0.1 * vs, 200)
        assert pair.truncated == 200
        ratios = pair.distances[1:] / pair.distances[:-1]
        np.testing.assert_allclose(ratios, SMALL, rtol=1e-9)

    def test_off_leaf_rejected(self):
        from pinchtwist.errors import NotAsymptotic

        with pytest.raises(NotAsymptotic):
            leaf_pair(linear_anosov(CAT), [0.3, 0.6], [0.35, 0.6], 50)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(0, 1), st.floats(0, 1))
def test_standard_inverse_property(lam, z, w):
    g = standard_map(lam)
    x = np.array([z, w])
    back = g.inverse().lift(g.lift(x))
    assert np.abs(back - x).max() < 1e-12
    assert np.abs(wrap(g.step(x) - g.lift(x))).max() < 1e-12
