import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pinchtwist.cocycle import CocycleSystem, SpectrumEstimate, constant_cocycle
from pinchtwist.criterion import (
    CriterionConfig,
    _holonomy_equivariance,
    criterion_verdict,
    cross_validate,
    dominant_projector,
    hyperbolicity_check,
    pinching_check,
    smooth_holonomy,
    transition_map_conjugated,
    transition_map_smooth,
    twisting_check,
)
from pinchtwist.errors import IllConditionedEigenbasis
from pinchtwist.linalg import eigen_by_modulus
from pinchtwist.shift import (
    MarkovShift,
    PeriodicWord,
    locally_constant_cocycle,
    make_homoclinic,
    simplicity_check_shift,
)
from pinchtwist.smooth import (
    linear_anosov,
    near_identity_cocycle,
    newton_refine_periodic,
    restricted_cocycle,
)
from pinchtwist.verdict import band, decide, pinching_component, twisting_component

from oracles import quadratic_roots, rotation, subspace_twisting_oracle
from test_smooth import CAT, perturbed_t4

BIG, SMALL = quadratic_roots(-3.0, 1.0)
FULL2 = MarkovShift.full(2)
DIAG = np.diag([2.0, 0.5])


def cat_leaf_pair(side, t=0.05):
    vals, V = np.linalg.eig(CAT.astype(float))
    pick = np.argmin(np.abs(vals)) if side == "stable" else np.argmax(np.abs(vals))
    y = np.array([0.123, 0.456])
    return y, y + t * V[:, pick].real


@pytest.fixture(scope="module")
def cat_near_identity():
    return near_identity_cocycle(linear_anosov(CAT), 0.01)


@pytest.fixture(scope="module")
def t4():
    """Perturbed and unperturbed restricted cocycles with their data."""
    A, h, g = perturbed_t4(theta=0.3)
    p = newton_refine_periodic(g, np.zeros(4), 1)
    return {
        "A": A, "h": h, "g": g, "p": p,
        "coc_g": restricted_cocycle(g, "uu", 2),
        "coc_f": restricted_cocycle(linear_anosov(A), "uu", 2),
    }


class TestBands:
    @pytest.mark.parametrize("margin,state", [
        (1e-5, "ok"), (1e-6, "not_decided"), (5e-7, "not_decided"),
        (1e-7, "fail"), (0.0, "fail"), (math.inf, "ok"),
    ])
    def test_band(self, margin, state):
        assert band(margin, 1e-6) == state

    def test_precedence(self):
        ok = {"ok": True, "state": "ok"}
        fail = {"ok": False, "state": "fail"}
        undecided = {"ok": False, "state": "not_decided"}
        assert decide(fail, fail, {"ok": False}) == "fails-pinching"
        assert decide(ok, fail, {"ok": False}) == "fails-twisting"
        assert decide(ok, ok, {"ok": False}) == "fails-bunching"
        assert decide(ok, ok, {"ok": True}, {"ok": False}) == "not-decided"
        assert decide(undecided, ok) == "not-decided"
        assert decide(ok, ok, extra_undecided=True) == "not-decided"
        assert decide(ok, ok, {"ok": True}, {"ok": True}) == "simple-predicted"


class TestSmoothHolonomy:
    def test_same_point_is_identity(self, cat_near_identity):
        y = np.array([0.3, 0.7])
        H = smooth_holonomy(cat_near_identity, y, y.copy())
        np.testing.assert_array_equal(H.matrix, np.eye(2))
        assert H.tail_bound == 0

    def test_constant_cocycle_is_identity(self):
        coc = constant_cocycle(np.array([[2.0, 1.0], [0.0, 0.5]]), linear_anosov(CAT))
        H = smooth_holonomy(coc, *cat_leaf_pair("stable"))
        np.testing.assert_array_equal(H.matrix, np.eye(2))
        assert H.tail_bound == 0

    def test_near_identity_contracts(self, cat_near_identity):
        H = smooth_holonomy(cat_near_identity, *cat_leaf_pair("stable"), N=200)
        assert H.method == "truncated"
        assert H.rho < 1
        assert not np.allclose(H.matrix, np.eye(2), atol=1e-6)
        assert np.linalg.norm(H.extended - H.matrix, 2) <= H.tail_bound

    @pytest.mark.parametrize("side", ["stable", "unstable"])
    def test_equivariance(self, cat_near_identity, side):
        y, z = cat_leaf_pair(side)
        residual, H0, H1 = _holonomy_equivariance(cat_near_identity, y, z, side, 200)
        assert residual <= 10 * max(H0.tail_bound, H1.tail_bound)

    def test_doubling_n(self, cat_near_identity):
        y, z = cat_leaf_pair("stable", 0.2)
        prev = None
        for N in (4, 8, 16, 32):
            H = smooth_holonomy(cat_near_identity, y, z, "stable", N)
            if prev is not None:
                assert np.linalg.norm(H.matrix - prev.matrix, 2) <= prev.tail_bound
                assert H.tail_bound <= prev.tail_bound
            prev = H

    def test_dominant_projector(self):
        L = np.diag([3.0, 0.5, 2.0])
        np.testing.assert_allclose(dominant_projector(L, 2), np.diag([1.0, 0.0, 1.0]),
                                   atol=1e-15)


class TestTransitionT4:
    def test_unperturbed_is_diagonal(self, t4):
        parts = transition_map_smooth(t4["coc_f"], t4["p"], t4["h"])
        _, eig = pinching_check(t4["coc_f"], t4["p"])
        C = np.linalg.solve(eig.vectors.real, parts.psi @ eig.vectors.real)
        np.testing.assert_allclose(C - np.diag(np.diag(C)), 0, atol=1e-8)
        np.testing.assert_allclose(np.abs(np.diag(C)), [BIG**2, BIG], rtol=1e-10)

    def test_two_paths_agree(self, t4):
        direct = transition_map_smooth(t4["coc_g"], t4["p"], t4["h"])
        psi, parts = transition_map_conjugated(t4["coc_f"], t4["p"], t4["h"],
                                               t4["g"].rotations[0])
        assert np.abs(direct.psi - psi).max() <= 1e-10
        assert direct.tail_sum < 1e-8

    def test_minor_equals_sine(self, t4):
        direct = transition_map_smooth(t4["coc_g"], t4["p"], t4["h"])
        comp, eig = pinching_check(t4["coc_g"], t4["p"])
        assert comp["ok"]
        tw = twisting_check(direct.psi, eig)
        assert tw["ok"]
        assert tw["min_minor"] == pytest.approx(math.sin(0.3), abs=1e-8)

    def test_zero_angle_matches_unperturbed(self, t4):
        A, h, g0 = perturbed_t4(theta=0.0)
        p0 = newton_refine_periodic(g0, np.zeros(4), 1)
        psi0 = transition_map_smooth(restricted_cocycle(g0, "uu", 2), p0, h).psi
        psi_f = transition_map_smooth(t4["coc_f"], t4["p"], t4["h"]).psi
        np.testing.assert_allclose(psi0, psi_f, atol=1e-12)

    def test_verdicts(self, t4):
        cfg = CriterionConfig(chi=0.48, bunching_samples=8)
        rep = criterion_verdict(t4["coc_g"], t4["p"], t4["h"], cfg)
        assert rep.pinching["ok"] and rep.twisting["ok"]
        assert rep.hyperbolicity["ok"]
        # chi/2-bunching at this chi is out of reach for the restricted cocycle
        assert rep.verdict == "fails-bunching"
        _, h, g0 = perturbed_t4(theta=0.0)
        p0 = newton_refine_periodic(g0, np.zeros(4), 1)
        rep0 = criterion_verdict(restricted_cocycle(g0, "uu", 2), p0, h, cfg)
        assert rep0.verdict == "fails-twisting"

    def test_hyperbolicity(self, t4):
        assert hyperbolicity_check(t4["p"], 0.9)["ok"]
        assert not hyperbolicity_check(t4["p"], 1.0)["ok"]


class TestPinching:
    def test_distinct_real(self):
        comp, _ = pinching_component(np.diag([3.0, 2.0, 0.5]))
        assert comp["ok"] and comp["min_gap"] == pytest.approx(0.5)

    def test_complex_pair_fails(self):
        comp, _ = pinching_component(2.0 * rotation(0.4))
        assert comp["state"] == "fail"

    def test_near_band(self):
        comp, _ = pinching_component(np.diag([1.0 + 5e-5, 1.0]), rel_gap=1e-4)
        assert comp["state"] == "not_decided"

    def test_one_dimensional(self):
        comp, eig = pinching_component(np.array([[3.0]]))
        assert comp["ok"]
        assert twisting_component(np.array([[2.0]]), eig)["ok"]


class TestTwisting:
    def test_diagonal_fails(self):
        _, eig = pinching_component(np.diag([3.0, 1.0]))
        assert twisting_component(np.diag([5.0, 2.0]), eig)["state"] == "fail"

    def test_rotation_in_skewed_basis(self):
        # unit columns, matching the gauge of the computed eigenbasis
        V = np.array([[1.0, 1.0], [0.0, 1.0]]) / np.array([1.0, math.sqrt(2)])
        F = V @ np.diag([3.0, 1.0]) @ np.linalg.inv(V)
        _, eig = pinching_component(F)
        tw = twisting_component(V @ rotation(0.7) @ np.linalg.inv(V), eig)
        assert tw["ok"]
        assert tw["min_minor"] == pytest.approx(math.sin(0.7), rel=1e-12)

    def test_ill_conditioned(self):
        F = np.array([[1.0, 1.0], [0.0, 1.0 + 1e-9]])
        with pytest.raises(IllConditionedEigenbasis):
            twisting_component(rotation(0.3), eigen_by_modulus(F))

    def test_complex_eigenbasis_not_applicable(self):
        _, eig = pinching_component(2.0 * rotation(0.4))
        assert twisting_component(rotation(0.3), eig)["state"] == "not_applicable"

    def test_matches_subspace_oracle_4d(self):
        _, eig = pinching_component(np.diag([4.0, 3.0, 2.0, 1.0]))
        rng = np.random.default_rng(11)
        checked = 0
        for trial in range(300):
            C = rng.standard_normal((4, 4))
            if trial % 3 == 0:
                C[rng.integers(4), rng.integers(4)] = 0.0
            if trial % 3 == 1:
                # rank-one 2x2 block kills a second-order minor
                C[2:, :2] = np.outer(rng.standard_normal(2), rng.standard_normal(2))
            tw = twisting_component(C, eig)
            want, worst = subspace_twisting_oracle(C)
            if tw["state"] == "not_decided" or 1e-9 < worst < 1e-3:
                continue
            assert (tw["state"] == "ok") == want
            checked += 1
        assert checked > 200

    @settings(max_examples=100, deadline=None)
    @given(angle=st.floats(0, 2 * math.pi), reflect=st.booleans(),
           twist=st.floats(0.1, 1.4))
    def test_orthogonal_gauge_invariance(self, angle, reflect, twist):
        Q = rotation(angle) @ (np.diag([1.0, -1.0]) if reflect else np.eye(2))
        P = PeriodicWord((0,))
        U = make_homoclinic(FULL2, P, "1")
        table = {0: DIAG, 1: rotation(twist)}
        base = simplicity_check_shift(locally_constant_cocycle(FULL2, table), P, U)
        conj = {v: Q @ M @ Q.T for v, M in table.items()}
        moved = simplicity_check_shift(locally_constant_cocycle(FULL2, conj), P, U)
        assert moved.verdict == base.verdict
        assert moved.twisting["min_minor"] == pytest.approx(base.twisting["min_minor"],
                                                            abs=1e-12)


class TestDelegation:
    def test_shift_cocycle_goes_through_symbolic_check(self):
        coc = locally_constant_cocycle(FULL2, {0: DIAG, 1: rotation(math.pi / 4)})
        P = PeriodicWord((0,))
        U = make_homoclinic(FULL2, P, "1")
        a = criterion_verdict(coc, P, U, {"chi": 1.0})
        b = simplicity_check_shift(coc, P, U)
        assert a.verdict == b.verdict == "simple-predicted"
        assert a.twisting["min_minor"] == b.twisting["min_minor"]


class TestCrossValidate:
    def report(self, verdict):
        coc = locally_constant_cocycle(FULL2, {0: DIAG, 1: rotation(math.pi / 4)})
        P = PeriodicWord((0,))
        rep = simplicity_check_shift(coc, P, make_homoclinic(FULL2, P, "1"))
        rep.verdict = verdict
        return rep

    @staticmethod
    def est(exponents, se):
        return SpectrumEstimate(np.array(exponents), np.array(se), 10**5, 10, 0)

    def test_consistent(self):
        assert cross_validate(self.report("simple-predicted"),
                              self.est([0.2, -0.2], [1e-3, 1e-3])) == "consistent"

    def test_inconsistent(self):
        assert cross_validate(self.report("simple-predicted"),
                              self.est([0.1, 0.0999], [1e-5, 1e-5])) == "inconsistent"

    def test_inconclusive(self):
        assert cross_validate(self.report("simple-predicted"),
                              self.est([0.1, 0.09], [0.01, 0.01])) == "inconclusive"
        assert cross_validate(self.report("fails-twisting"),
                              self.est([0.2, -0.2], [1e-3, 1e-3])) == "inconclusive"


def test_generic_cocycle_system_uses_generator(cat_near_identity):
    # a cocycle given only by its generator takes the same path as the built-in one
    coc = CocycleSystem(2, cat_near_identity.base, cat_near_identity.generator)
    y, z = cat_leaf_pair("stable")
    a = smooth_holonomy(coc, y, z)
    b = smooth_holonomy(cat_near_identity, y, z)
    np.testing.assert_array_equal(a.matrix, b.matrix)
