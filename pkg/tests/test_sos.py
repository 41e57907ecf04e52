"""Sum-of-squares layer: basis enumeration, Gram transcription,
certificate verification, S-procedure assembly, and the closed
transcribe -> solve -> verify loop."""

import math

import numpy as np
import pytest

from dmpc.poly import Polynomial
from dmpc.sdp import solve_sdp
from dmpc.sos import (GramCertificate, StructuralInfeasibility,
                      gram_transcribe, monomial_basis, newton_reduce,
                      prove_sos, s_procedure_assemble, verify_gram)


def poly(nvars, terms):
    return Polynomial(nvars, terms)


MOTZKIN = poly(2, {(4, 2): 1.0, (2, 4): 1.0, (2, 2): -3.0, (0, 0): 1.0})


class TestMonomialBasis:
    def test_two_vars_degree_one(self):
        assert monomial_basis(2, 1) == [(0, 0), (1, 0), (0, 1)]

    def test_six_vars_degree_two_count(self):
        assert len(monomial_basis(6, 2)) == math.comb(8, 2)

    def test_three_vars_degree_two_graded_lex(self):
        assert monomial_basis(3, 2) == [
            (0, 0, 0),
            (1, 0, 0), (0, 1, 0), (0, 0, 1),
            (2, 0, 0), (1, 1, 0), (1, 0, 1), (0, 2, 0), (0, 1, 1),
            (0, 0, 2)]

    def test_counts_binomial(self):
        for nv in (1, 2, 3, 4):
            for hd in (0, 1, 2, 3):
                assert len(monomial_basis(nv, hd)) == math.comb(nv + hd, hd)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            monomial_basis(0, 2)
        with pytest.raises(ValueError):
            monomial_basis(2, -1)


class TestNewtonReduce:
    def test_motzkin_drops_pure_cubes(self):
        red = newton_reduce(MOTZKIN, monomial_basis(2, 3))
        assert (3, 0) not in red and (0, 3) not in red
        assert len(red) == 8

    def test_square_keeps_only_linear_part(self):
        p = poly(2, {(2, 0): 1.0, (1, 1): 2.0, (0, 2): 1.0})
        assert set(newton_reduce(p, monomial_basis(2, 2))) == \
            {(1, 0), (0, 1)}

    def test_reduction_never_breaks_an_sos(self):
        # for SOS p built from known squares, the reduced basis still
        # admits a Gram certificate
        rng = np.random.default_rng(3)
        for _ in range(10):
            nv = int(rng.integers(1, 4))
            hd = int(rng.integers(1, 3))
            basis = monomial_basis(nv, hd)
            p = Polynomial.zero(nv)
            for _ in range(2):
                q = Polynomial(
                    nv, {b: float(c) for b, c in
                         zip(basis, rng.standard_normal(len(basis)))})
                p = p + q * q
            red = newton_reduce(p, basis)
            sol = solve_sdp(gram_transcribe(p, red))
            assert sol.status == "optimal"

    def test_zero_polynomial_empty(self):
        assert newton_reduce(Polynomial.zero(2), monomial_basis(2, 2)) == []


class TestGramTranscription:
    def test_perfect_square(self):
        sol = solve_sdp(gram_transcribe(poly(1, {(2,): 1.0}),
                                        monomial_basis(1, 1)))
        assert sol.status == "optimal"
        assert np.allclose(sol.X[0], np.diag([0.0, 1.0]), atol=1e-7)

    def test_shifted_square_infeasible(self):
        # x^2 - 1 forces Q_11 = -1
        sol = solve_sdp(gram_transcribe(poly(1, {(2,): 1.0, (0,): -1.0}),
                                        monomial_basis(1, 1)))
        assert sol.status == "primal-infeasible"

    def test_motzkin_infeasible_full_basis(self):
        sol = solve_sdp(gram_transcribe(MOTZKIN, monomial_basis(2, 3)))
        assert sol.status == "primal-infeasible"
        # the certificate is a genuine Farkas ray
        prob = gram_transcribe(MOTZKIN, monomial_basis(2, 3))
        assert float(np.asarray(prob.b) @ sol.y) > 0.0
        assert min(np.linalg.eigvalsh(S).min() for S in sol.S) >= -1e-6

    def test_motzkin_infeasible_reduced_basis(self):
        red = newton_reduce(MOTZKIN, monomial_basis(2, 3))
        sol = solve_sdp(gram_transcribe(MOTZKIN, red))
        assert sol.status == "primal-infeasible"

    def test_unreachable_monomial_is_structural(self):
        with pytest.raises(StructuralInfeasibility):
            gram_transcribe(poly(1, {(4,): 1.0}), monomial_basis(1, 1))
        with pytest.raises(StructuralInfeasibility):
            gram_transcribe(poly(2, {(3, 2): 1.0, (0, 0): 1.0}),
                            [(0, 0), (1, 0)])

    def test_zero_rows_matched(self):
        # monomials of z z' outside p's support are matched to zero:
        # x1^2 + 1 over {1, x1} forces the off-diagonal to vanish
        sol = solve_sdp(gram_transcribe(poly(1, {(2,): 1.0, (0,): 1.0}),
                                        monomial_basis(1, 1)))
        assert sol.status == "optimal"
        assert abs(sol.X[0][0, 1]) <= 1e-8


class TestVerifyGram:
    def test_valid_certificate(self):
        cert = GramCertificate(((0,), (1,)),
                               np.array([[0.0, 0.0], [0.0, 1.0]]))
        rep = verify_gram(poly(1, {(2,): 1.0}), cert)
        assert rep.min_eig == 0.0
        assert rep.residual == 0.0
        assert rep.valid

    def test_sign_flip_invalid(self):
        cert = GramCertificate(((0,), (1,)),
                               np.array([[0.0, 0.0], [0.0, -1.0]]))
        rep = verify_gram(poly(1, {(2,): 1.0}), cert)
        assert rep.min_eig == -1.0
        assert not rep.valid

    def test_sum_of_two_squares_identity(self):
        # (x1+x2)^2 + (x1-x2)^2 = z' (2I) z on z = (x1, x2)
        p = poly(2, {(2, 0): 2.0, (0, 2): 2.0})
        rep = verify_gram(p, GramCertificate(((1, 0), (0, 1)),
                                             2.0 * np.eye(2)))
        assert rep.residual == 0.0
        assert rep.min_eig == 2.0
        assert rep.valid

    def test_residual_detects_wrong_polynomial(self):
        cert = GramCertificate(((1, 0), (0, 1)), 2.0 * np.eye(2))
        rep = verify_gram(poly(2, {(2, 0): 1.0, (0, 2): 1.0}), cert)
        assert rep.residual == pytest.approx(1.0)
        assert not rep.valid

    def test_asymmetric_q_is_symmetrized(self):
        Q = np.array([[1.0, 2.0], [0.0, 1.0]])
        cert = GramCertificate(((1, 0), (0, 1)), Q)
        p = cert.gram_poly()
        rep = verify_gram(p, cert)
        assert rep.residual == 0.0


class TestSProcedure:
    def test_self_cancellation(self):
        p = poly(2, {(2, 0): 1.0, (1, 1): -3.0})
        one = Polynomial.constant(2, 1.0)
        assert s_procedure_assemble(p, [(one, p)]).is_zero()

    def test_trivial_multiplier_globalizes(self):
        # x1^2 - 1 * (-1) = x1^2 + 1, SOS
        out = s_procedure_assemble(
            poly(1, {(2,): 1.0}),
            [(Polynomial.constant(1, 1.0), Polynomial.constant(1, -1.0))])
        assert out.terms == {(2,): 1.0, (0,): 1.0}
        cert, rep = prove_sos(out)
        assert rep is not None and rep.valid

    def test_interval_containment_constant_certificate(self):
        # {x^2 <= 1} in {x^2 <= 4}: (4 - x^2) - 1*(1 - x^2) = 3
        x1sq = poly(1, {(2,): 1.0})
        out = s_procedure_assemble(
            Polynomial.constant(1, 4.0) - x1sq,
            [(Polynomial.constant(1, 1.0),
              Polynomial.constant(1, 1.0) - x1sq)])
        assert out.terms == {(0,): 3.0}
        cert, rep = prove_sos(out)
        assert rep is not None and rep.valid

    def test_dimension_mismatch(self):
        with pytest.raises(Exception):
            s_procedure_assemble(
                poly(1, {(2,): 1.0}),
                [(Polynomial.constant(2, 1.0), poly(2, {(2, 0): 1.0}))])


class TestClosedLoop:
    """transcribe -> solve -> verify is closed at tol 1e-6, plus the
    sampling necessary-condition cross-check."""

    def test_random_sos_certify_and_sample(self):
        rng = np.random.default_rng(7)
        for trial in range(30):
            nv = int(rng.integers(1, 4))
            hd = int(rng.integers(1, 3))
            basis = monomial_basis(nv, hd)
            p = Polynomial.zero(nv)
            for _ in range(int(rng.integers(1, 4))):
                q = Polynomial(
                    nv, {b: float(c) for b, c in
                         zip(basis, rng.standard_normal(len(basis)))})
                p = p + q * q
            cert, rep = prove_sos(p, tol=1e-6)
            assert cert is not None, trial
            assert rep.valid, (trial, rep)
            pts = rng.uniform(-2.0, 2.0, size=(10_000, nv))
            assert p.evaluate_many(pts).min() >= -1e-9

    def test_scaled_certificates(self):
        # scale invariance of the loop across 6 orders of magnitude
        p0 = poly(2, {(2, 0): 1.0, (1, 1): 1.0, (0, 2): 1.0})
        for s in (1e-3, 1.0, 1e3):
            cert, rep = prove_sos(s * p0, tol=1e-6)
            assert rep.valid, s

    def test_motzkin_returns_none(self):
        cert, rep = prove_sos(MOTZKIN)
        assert cert is None and rep is None

    def test_zero_polynomial_trivial_certificate(self):
        cert, rep = prove_sos(Polynomial.zero(3))
        assert rep.valid
        assert cert.Q.shape == (1, 1)

    def test_structural_infeasibility_returns_none(self):
        # degree-6 target with a degree-2 cap on the basis
        cert, rep = prove_sos(poly(1, {(6,): 1.0}),
                              basis=monomial_basis(1, 1),
                              reduce_basis=False)
        assert cert is None and rep is None


class TestCertificateSerialization:
    def test_round_trip_exact(self):
        cert = GramCertificate(
            ((0, 0), (1, 0), (0, 1)),
            np.array([[1.0, 0.5, 0.0], [0.5, 2.0, -1.0], [0.0, -1.0, 3.0]]))
        cert2 = GramCertificate.from_json(cert.to_json())
        assert cert2.basis == cert.basis
        assert np.array_equal(cert2.Q, cert.Q)
        assert cert.to_json() == cert2.to_json()

    def test_dimension_check(self):
        with pytest.raises(ValueError):
            GramCertificate(((0,), (1,)), np.eye(3))

    def test_gram_poly_expansion(self):
        cert = GramCertificate(((1, 0), (0, 1)),
                               np.array([[1.0, 1.0], [1.0, 1.0]]))
        assert cert.gram_poly().terms == \
            {(2, 0): 1.0, (1, 1): 2.0, (0, 2): 1.0}
