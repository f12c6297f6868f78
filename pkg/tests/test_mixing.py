"""Parameterization algebra, couplings and the distortionless beamformer."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import helpers
from helpers import crandn, hermitian_pd
from icex.mixing import (DegenerateParameterError, DegenerateSignalError,
                         ExtractionParams, assemble, background_basis,
                         couple_a_from_w, couple_w_from_a, mpdr)


def linked_pair(rng, d):
    """Random (a, w) with w^H a = 1 and non-tiny gamma."""
    a = crandn(rng, (d,))
    a[0] += 2.0
    w = crandn(rng, (d,))
    return a, w / np.conj(np.vdot(w, a))


class TestExtractionParams:
    def test_accepts_linked_pair(self, rng):
        a, w = linked_pair(rng, 5)
        p = ExtractionParams(a, w)
        assert p.d == 5
        assert np.isclose(np.vdot(p.w, p.a), 1.0)
        # named blocks agree with the layout a = [gamma; g], w = [beta; h]
        assert p.gamma == complex(a[0])
        assert np.array_equal(p.g, p.a[1:])
        assert p.beta == complex(w[0])
        assert np.array_equal(p.h, p.w[1:])

    def test_link_equals_conjugate_beta_identity(self, rng):
        # w^H a = 1  <=>  conj(beta) gamma = 1 - h^H g
        a, w = linked_pair(rng, 6)
        p = ExtractionParams(a, w)
        lhs = np.conj(p.beta) * p.gamma
        rhs = 1.0 - np.vdot(p.h, p.g)
        assert abs(lhs - rhs) < 1e-12

    def test_rejects_broken_link(self, rng):
        a, w = linked_pair(rng, 4)
        with pytest.raises(DegenerateParameterError):
            ExtractionParams(a, 1.5 * w)

    def test_rejects_zero_gamma(self, rng):
        a, w = linked_pair(rng, 4)
        a = a.copy()
        a[0] = 0.0
        with pytest.raises(DegenerateParameterError):
            ExtractionParams(a, w)

    def test_rejects_short_vectors(self):
        with pytest.raises(ValueError):
            ExtractionParams(np.ones(1, dtype=complex), np.ones(1, dtype=complex))

    def test_repair_rescales_w(self, rng):
        a, w = linked_pair(rng, 5)
        p = ExtractionParams.repair(a, 3.7 * w)
        assert abs(np.vdot(p.w, p.a) - 1.0) < 1e-12
        assert np.allclose(p.w, w)

    def test_repair_rejects_orthogonal_w(self):
        a = np.array([1.0, 0.0, 0.0], dtype=complex)
        w = np.array([0.0, 1.0, 0.0], dtype=complex)
        with pytest.raises(DegenerateParameterError):
            ExtractionParams.repair(a, w)

    def test_from_coupling_requires_exactly_one_vector(self, rng):
        a, w = linked_pair(rng, 4)
        Cx = hermitian_pd(rng, 4)
        with pytest.raises(ValueError):
            ExtractionParams.from_coupling(a=a, w=w, Cx=Cx)
        with pytest.raises(ValueError):
            ExtractionParams.from_coupling(a=a)

    def test_normalized_gamma_fixes_scale(self, rng):
        a, w = linked_pair(rng, 5)
        q = ExtractionParams(a, w).normalized_gamma()
        assert np.isclose(q.gamma, 1.0)
        assert abs(np.vdot(q.w, q.a) - 1.0) < 1e-12


class TestAssemble:
    def test_background_basis_annihilates_a(self, rng):
        a = crandn(rng, (6,))
        B = background_basis(a)
        assert B.shape == (5, 6)
        assert np.linalg.norm(B @ a) < 1e-12
        assert np.allclose(B[:, 0], a[1:])
        assert np.allclose(B[:, 1:], -a[0] * np.eye(5))

    def test_demixing_inverts_mixing(self, rng):
        a, w = linked_pair(rng, 6)
        mm = assemble(ExtractionParams(a, w))
        assert np.allclose(mm.W_ice @ mm.A_ice, np.eye(6), atol=1e-10)
        assert np.allclose(mm.W_ice[0, :], np.conj(w))
        assert np.allclose(mm.A_ice[:, 0], a)
        assert np.allclose(mm.B, mm.W_ice[1:, :])

    def test_det_matches_lu(self, rng):
        for d in (2, 3, 5, 8):
            a, w = linked_pair(rng, d)
            mm = assemble(ExtractionParams(a, w))
            assert np.isclose(mm.det_W, np.linalg.det(mm.W_ice), atol=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(min_value=2, max_value=8), st.integers(min_value=0, max_value=2**31))
    def test_inverse_property_random(self, d, seed):
        rng = np.random.default_rng(seed)
        a, w = linked_pair(rng, d)
        mm = assemble(ExtractionParams(a, w))
        assert np.allclose(mm.W_ice @ mm.A_ice, np.eye(d), atol=1e-8)


class TestCouplings:
    def test_w_from_a_is_mpdr_weights(self, rng):
        a = crandn(rng, (5,)) + 2.0
        Cx = hermitian_pd(rng, 5)
        w = couple_w_from_a(a, Cx)
        u = np.linalg.solve(Cx, a)
        assert np.allclose(w, u / np.vdot(a, u), atol=1e-12)
        assert abs(np.vdot(w, a) - 1.0) < 1e-12

    def test_a_from_w_matches_definition(self, rng):
        w = crandn(rng, (5,))
        Cx = hermitian_pd(rng, 5)
        a = couple_a_from_w(w, Cx)
        assert np.allclose(a, (Cx @ w) / np.vdot(w, Cx @ w), atol=1e-12)

    def test_round_trip_is_involution(self, rng):
        # a -> w -> a returns a itself: the normalizations cancel exactly
        Cx = hermitian_pd(rng, 6)
        a = crandn(rng, (6,)) + 1.0
        w = couple_w_from_a(a, Cx)
        a2 = couple_a_from_w(w, Cx)
        assert helpers.rel_err(a2, a) < 1e-10
        assert helpers.rel_err(couple_w_from_a(a2, Cx), w) < 1e-10

    def test_inverse_power_identity(self, rng):
        Cx = hermitian_pd(rng, 5)
        a = crandn(rng, (5,)) + 1.0
        w = couple_w_from_a(a, Cx)
        lhs = np.real(np.vdot(a, np.linalg.solve(Cx, a)))
        rhs = 1.0 / np.real(np.vdot(w, Cx @ w))
        assert abs(lhs - rhs) / abs(lhs) < 1e-12

    def test_degenerate_quadratic_form_raises(self):
        Cx = np.eye(3, dtype=complex)
        with pytest.raises(DegenerateSignalError):
            couple_a_from_w(np.zeros(3, dtype=complex), Cx)


class TestMpdr:
    def test_exact_recovery_with_model_covariance(self, rng):
        # analytic covariance, true steering: output equals the source exactly
        d, N = 5, 400
        A = crandn(rng, (d, d)) + 1.5 * np.eye(d)
        var = 0.5 + rng.random(d)
        S = crandn(rng, (d, N)) * np.sqrt(var)[:, None]
        Cx = (A * var) @ A.conj().T
        Cx = 0.5 * (Cx + Cx.conj().T)
        s_hat = mpdr(A[:, 0], Cx, A @ S)
        assert np.linalg.norm(s_hat - S[0]) / np.linalg.norm(S[0]) < 1e-10

    def test_sample_covariance_output_is_uncorrelated_with_background(self, rng):
        # orthogonal constraint: B Cx w = 0 for the sample covariance coupling
        d, N = 4, 300
        X = crandn(rng, (d, N))
        Cx = helpers.sample_cov(X)
        a = crandn(rng, (d,)) + 1.0
        w = couple_w_from_a(a, Cx)
        s_hat = np.conj(w) @ X
        Z = background_basis(couple_a_from_w(w, Cx)) @ X
        assert np.max(np.abs(Z @ s_hat.conj().T / N)) < 1e-12
