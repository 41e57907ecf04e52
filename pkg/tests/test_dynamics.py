"""Spacecraft attitude model: pinned examples, cross-product and DCM
oracles, and the MRP kinematic matrix identity."""

import math

import numpy as np
import pytest

from dmpc.dynamics import (ConstraintSet, GimbalLockError, SpacecraftParams,
                           box_input_polytope, dcm_to_mrp, euler_to_dcm,
                           evaluate_dynamics, keep_out_cone_poly,
                           mrp_body_to_inertial_numerator, mrp_to_dcm,
                           mrp_to_euler, principal_mrp, spacecraft_model)
from dmpc.poly import Polynomial

J_HUBBLE = np.array([31046.0, 77217.0, 78754.0])


@pytest.fixture(scope="module")
def model():
    return spacecraft_model(SpacecraftParams(tuple(J_HUBBLE)))


class TestSpacecraftModel:
    def test_origin_equilibrium(self, model):
        np.testing.assert_allclose(
            evaluate_dynamics(model, np.zeros(6), np.zeros(3)), 0.0,
            atol=1e-15)

    def test_b_of_zero_is_identity(self, model):
        # sigma = 0: sigma_dot = omega / 4
        omega = np.array([0.3, -0.1, 0.7])
        x = np.concatenate([omega, np.zeros(3)])
        xdot = evaluate_dynamics(model, x, np.zeros(3))
        np.testing.assert_allclose(xdot[3:], omega / 4.0, rtol=1e-13)

    def test_torque_through_inertia(self, model):
        u = np.array([1.2, 0.0, 0.0])
        xdot = evaluate_dynamics(model, np.zeros(6), u)
        assert xdot[0] == pytest.approx(1.2 / 31046.0, rel=1e-13)
        np.testing.assert_allclose(xdot[1:], 0.0, atol=1e-18)

    def test_gyroscopic_cross_product_oracle(self, model):
        omega = np.array([0.01, 0.02, 0.0])
        x = np.concatenate([omega, np.zeros(3)])
        xdot = evaluate_dynamics(model, x, np.zeros(3))
        want = -np.cross(omega, J_HUBBLE * omega) / J_HUBBLE
        np.testing.assert_allclose(xdot[:3], want, rtol=1e-12, atol=1e-18)

    def test_affine_in_input(self, model):
        rng = np.random.default_rng(0)
        for _ in range(10):
            x = rng.uniform(-0.5, 0.5, 6)
            u1 = rng.normal(size=3)
            u2 = rng.normal(size=3)
            a = rng.uniform()
            lhs = evaluate_dynamics(model, x, a * u1 + (1 - a) * u2)
            rhs = (a * evaluate_dynamics(model, x, u1)
                   + (1 - a) * evaluate_dynamics(model, x, u2))
            np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-15)

    def test_full_dynamics_numeric_oracle(self, model):
        # independent dense reimplementation of Eq-style MRP dynamics
        rng = np.random.default_rng(1)
        for _ in range(25):
            w = rng.uniform(-0.1, 0.1, 3)
            s = rng.uniform(-0.8, 0.8, 3)
            u = rng.uniform(-1, 1, 3)
            ss = s @ s
            sk = np.array([[0, -s[2], s[1]], [s[2], 0, -s[0]],
                           [-s[1], s[0], 0.0]])
            B = (1 - ss) * np.eye(3) + 2 * sk + 2 * np.outer(s, s)
            want = np.concatenate([
                (-np.cross(w, J_HUBBLE * w) + u) / J_HUBBLE,
                0.25 * B @ w,
            ])
            got = evaluate_dynamics(model, np.concatenate([w, s]), u)
            np.testing.assert_allclose(got, want, rtol=1e-11, atol=1e-14)

    def test_nonpositive_inertia_rejected(self):
        with pytest.raises(ValueError):
            SpacecraftParams((1.0, -2.0, 3.0))

    def test_btb_polynomial_identity(self):
        # B(s)^T B(s) = (1 + s^T s)^2 I, asserted coefficient-wise
        n = 3
        s = [Polynomial.variable(n, i) for i in range(3)]
        ss = s[0] * s[0] + s[1] * s[1] + s[2] * s[2]
        one = Polynomial.constant(n, 1.0)
        sk = [[Polynomial.zero(n), -s[2], s[1]],
              [s[2], Polynomial.zero(n), -s[0]],
              [-s[1], s[0], Polynomial.zero(n)]]
        B = [[sk[i][j] * 2.0 + s[i] * s[j] * 2.0
              + ((one - ss) if i == j else Polynomial.zero(n))
              for j in range(3)] for i in range(3)]
        target = (one + ss) * (one + ss)
        for i in range(3):
            for j in range(3):
                acc = Polynomial.zero(n)
                for k in range(3):
                    acc = acc + B[k][i] * B[k][j]
                want = target if i == j else Polynomial.zero(n)
                diff = acc - want
                assert all(abs(c) < 1e-12 for c in diff.terms.values()), \
                    f"BtB entry ({i},{j}) deviates"


class TestKeepOutCone:
    N = np.array([0.0, 1.0, 0.0])
    B = np.array([1.0, 0.0, 0.0])
    DELTA = math.radians(20.0)

    def test_identity_attitude_is_safe(self):
        c = keep_out_cone_poly(self.N, self.B, self.DELTA)
        assert c.evaluate(np.zeros(3)) == pytest.approx(
            -math.cos(self.DELTA), abs=1e-12)

    def test_aligned_boresight_violates(self):
        # rotate b = e1 onto n = e2: +90 deg about e3
        c = keep_out_cone_poly(self.N, self.B, self.DELTA)
        sigma = principal_mrp([0.0, 0.0, 1.0], math.pi / 2.0)
        ss = sigma @ sigma
        want = (1.0 + ss) ** 2 * (1.0 - math.cos(self.DELTA))
        assert c.evaluate(sigma) == pytest.approx(want, rel=1e-10)
        assert c.evaluate(sigma) > 0.0

    def test_sign_agrees_with_dcm_oracle(self):
        c = keep_out_cone_poly(self.N, self.B, self.DELTA)
        rng = np.random.default_rng(2)
        count = 0
        while count < 10_000:
            sigma = rng.uniform(-2.5, 2.5, 3)
            if sigma @ sigma > 6.0:
                continue
            count += 1
            raw = self.N @ (mrp_to_dcm(sigma) @ self.B) - math.cos(self.DELTA)
            val = c.evaluate(sigma)
            if abs(raw) > 1e-9:
                assert np.sign(val) == np.sign(raw)

    def test_degree_is_four(self):
        c = keep_out_cone_poly(self.N, self.B, self.DELTA)
        assert c.degree() == 4

    def test_embedding_in_state_space(self):
        c3 = keep_out_cone_poly(self.N, self.B, self.DELTA)
        c6 = keep_out_cone_poly(self.N, self.B, self.DELTA,
                                nvars=6, offset=3)
        rng = np.random.default_rng(3)
        for _ in range(20):
            x = rng.uniform(-1, 1, 6)
            assert c6.evaluate(x) == pytest.approx(c3.evaluate(x[3:]),
                                                   rel=1e-12, abs=1e-12)

    def test_non_unit_inputs_rejected(self):
        with pytest.raises(ValueError):
            keep_out_cone_poly([0, 2.0, 0], self.B, self.DELTA)
        with pytest.raises(ValueError):
            keep_out_cone_poly(self.N, self.B, 0.0)

    def test_numerator_matches_scaled_dcm(self):
        T = mrp_body_to_inertial_numerator()
        rng = np.random.default_rng(4)
        for _ in range(50):
            sigma = rng.uniform(-1.5, 1.5, 3)
            scale = (1.0 + sigma @ sigma) ** 2
            want = scale * mrp_to_dcm(sigma)
            got = np.array([[T[i][j].evaluate(sigma) for j in range(3)]
                            for i in range(3)])
            np.testing.assert_allclose(got, want, rtol=1e-11, atol=1e-11)


class TestAttitudeConversions:
    def test_identity(self):
        assert mrp_to_euler(np.zeros(3)) == pytest.approx((0.0, 0.0, 0.0))

    def test_principal_x_rotation(self):
        sigma = np.array([math.tan(math.pi / 8.0), 0.0, 0.0])
        phi, theta, psi = mrp_to_euler(sigma)
        assert phi == pytest.approx(math.pi / 2.0, abs=1e-12)
        assert theta == pytest.approx(0.0, abs=1e-12)
        assert psi == pytest.approx(0.0, abs=1e-12)

    def test_gimbal_lock_flagged(self):
        sigma = principal_mrp([0.0, 1.0, 0.0], math.pi / 2.0)
        with pytest.raises(GimbalLockError):
            mrp_to_euler(sigma)

    def test_euler_round_trip(self):
        rng = np.random.default_rng(5)
        done = 0
        while done < 1000:
            phi = rng.uniform(-math.pi, math.pi)
            theta = rng.uniform(-math.pi / 2 + 0.05, math.pi / 2 - 0.05)
            psi = rng.uniform(-math.pi, math.pi)
            sigma = dcm_to_mrp(euler_to_dcm(phi, theta, psi))
            got = mrp_to_euler(sigma)
            np.testing.assert_allclose(got, (phi, theta, psi), atol=1e-9)
            done += 1

    def test_dcm_round_trip(self):
        rng = np.random.default_rng(6)
        done = 0
        while done < 200:
            sigma = rng.uniform(-0.9, 0.9, 3)
            T = mrp_to_dcm(sigma)
            # orthonormality of the rational DCM
            np.testing.assert_allclose(T @ T.T, np.eye(3), atol=1e-12)
            assert np.linalg.det(T) == pytest.approx(1.0, abs=1e-12)
            if sigma @ sigma < 0.98:
                # principal set round-trips exactly
                np.testing.assert_allclose(dcm_to_mrp(T), sigma, atol=1e-12)
                done += 1
            else:
                # outside it, extraction may land on the shadow MRP of the
                # same attitude; only the rotation must match
                np.testing.assert_allclose(mrp_to_dcm(dcm_to_mrp(T)), T,
                                           atol=1e-12)

    def test_principal_mrp_angle(self):
        sigma = principal_mrp([1.0, 0, 0], math.pi / 2)
        assert sigma[0] == pytest.approx(math.tan(math.pi / 8))


class TestConstraintSet:
    def test_origin_must_be_strictly_inside(self):
        g_bad = Polynomial.constant(6, 0.0)  # g(0) = 0 is not strict
        with pytest.raises(ValueError):
            ConstraintSet((g_bad,), np.eye(3))

    def test_box_polytope(self):
        HU = box_input_polytope([2.0, 4.0, 5.0])
        assert HU.shape == (6, 3)
        # u at a corner of the box sits on the boundary H_U u = 1
        u = np.array([2.0, -4.0, 5.0])
        assert np.max(HU @ u) == pytest.approx(1.0)
        assert np.max(HU @ (0.5 * u)) == pytest.approx(0.5)

    def test_cone_and_rate_constraints_negative_at_origin(self):
        s = [Polynomial.variable(6, 3 + i) for i in range(3)]
        ss = s[0] * s[0] + s[1] * s[1] + s[2] * s[2]
        polys = [
            ss - 1.0,
            keep_out_cone_poly([0, 1.0, 0], [1.0, 0, 0],
                               math.radians(20), nvars=6, offset=3),
        ]
        w = [Polynomial.variable(6, i) for i in range(3)]
        rate = math.radians(0.5)
        polys += [wi * wi - rate * rate for wi in w]
        cs = ConstraintSet(tuple(polys), box_input_polytope([1.0] * 3))
        for g in cs.state_polys:
            assert g.evaluate(np.zeros(6)) < 0.0
