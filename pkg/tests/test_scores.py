"""Score nonlinearities, their normalization, and the integrable pairs."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import crandn, rel_err, wirtinger_fd
from icex.scores import (DegenerateScoreError, ScaledModel, ScoreModel,
                         normalize, score_rational, score_tanh, score_vector)

# the real-arithmetic tanh kernel agrees with complex tanh to a few ulps
TANH_RTOL = 1e-12


class TestElementwiseScores:
    def test_tanh_matches_complex_reference(self, rng):
        s = 3.0 * crandn(rng, (2000,))
        ref = np.conj(np.tanh(s))
        assert rel_err(score_tanh(s), ref) < TANH_RTOL

    def test_tanh_handles_large_real_parts(self):
        s = np.array([40.0 + 0.3j, -55.0 - 2.1j, 700.0 + 1.0j])
        got = score_tanh(s)
        assert np.all(np.isfinite(got))
        assert rel_err(got, np.conj(np.tanh(s))) < TANH_RTOL

    def test_tanh_near_tangent_poles(self):
        # imaginary parts near (2k+1) pi/2, where tan blows up but tanh does not
        y = np.pi / 2 + np.array([1e-9, -1e-9, 1e-12])
        s = 0.7 + 1j * y
        assert rel_err(score_tanh(s), np.conj(np.tanh(s))) < TANH_RTOL

    def test_tanh_rejects_non_finite(self):
        with pytest.raises(ValueError):
            score_tanh(np.array([1.0, np.inf]))

    def test_rational_formula_and_rho(self, rng):
        s = crandn(rng, (500,))
        psi, rho = score_rational(s)
        assert np.allclose(psi, np.conj(s) / (1.0 + np.abs(s) ** 2))
        assert np.isclose(rho, np.mean(1.0 / (1.0 + np.abs(s) ** 2) ** 2))

    def test_vector_couples_rows_through_radius(self, rng):
        S = crandn(rng, (3, 400))
        r = np.sqrt(np.sum(np.abs(S) ** 2, axis=0))
        assert rel_err(score_vector(S), np.conj(np.tanh(S)) / r) < TANH_RTOL

    def test_vector_pilot_enters_radius(self, rng):
        S = crandn(rng, (2, 300))
        p = crandn(rng, (300,))
        r = np.sqrt(np.sum(np.abs(S) ** 2, axis=0) + np.abs(p) ** 2)
        assert rel_err(score_vector(S, pilot=p),
                       np.conj(np.tanh(S)) / r) < TANH_RTOL

    def test_vector_zero_sample_stays_zero(self):
        S = np.zeros((2, 5), dtype=complex)
        assert np.all(score_vector(S) == 0.0)

    def test_vector_one_dimensional_input(self, rng):
        s = crandn(rng, (100,))
        out = score_vector(s)
        assert out.shape == (100,)
        assert rel_err(out, np.conj(np.tanh(s)) / np.abs(s)) < TANH_RTOL


class TestNormalize:
    def test_unit_stationarity_after_rescale(self, rng):
        s = crandn(rng, (400,))
        phi, nu = normalize(score_tanh(s), s)
        assert abs(np.mean(s * phi) - 1.0) < 1e-12
        assert nu != 0

    def test_rowwise(self, rng):
        S = crandn(rng, (3, 200))
        phi, nu = normalize(score_tanh(S), S)
        assert np.allclose(np.mean(S * phi, axis=1), 1.0, atol=1e-12)
        assert nu.shape == (3,)

    def test_degenerate_raises(self):
        s = np.array([1.0, -1.0], dtype=complex)
        phi = np.array([1.0, 1.0], dtype=complex)  # mean(s phi) = 0
        with pytest.raises(DegenerateScoreError):
            normalize(phi, s)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValueError):
            normalize(crandn(rng, (5,)), crandn(rng, (6,)))


class TestScoreModel:
    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ScoreModel("sigmoid")

    def test_scalar_kinds_require_k1(self):
        with pytest.raises(ValueError):
            ScoreModel("tanh-conjugate", K=2)

    def test_pilot_only_for_piloted_kind(self, rng):
        with pytest.raises(ValueError):
            ScoreModel("vector-coupled", K=2, pilot=crandn(rng, (10,)))

    def test_piloted_requires_pilot_at_call(self, rng):
        m = ScoreModel("piloted-vector", K=2)
        with pytest.raises(ValueError):
            m.phi(crandn(rng, (2, 50)))

    def test_pilot_stored_and_overridable(self, rng):
        p = 5.0 * crandn(rng, (64,))
        m = ScoreModel("piloted-vector", K=2, pilot=p)
        assert np.allclose(m.pilot, p)
        q = crandn(rng, (64,))
        S = crandn(rng, (2, 64))
        # a per-call pilot takes precedence over the stored one
        assert not np.allclose(m.phi(S), m.phi(S, pilot=q))

    def test_phi_rescale_scale_equivariance(self, rng):
        # sigma re-estimation makes phi(c s) = phi(s)/c for real c > 0
        s = crandn(rng, (600,))
        m = ScoreModel("tanh-conjugate")
        assert rel_err(m.phi(7.5 * s), m.phi(s) / 7.5) < 1e-12

    def test_phi_without_rescale_is_raw(self, rng):
        s = 2.0 * crandn(rng, (300,))
        m = ScoreModel("tanh-conjugate", rescale=False)
        assert rel_err(m.phi(s), np.conj(np.tanh(s))) < TANH_RTOL

    def test_vector_phi_shape_validation(self, rng):
        m = ScoreModel("vector-coupled", K=3)
        with pytest.raises(ValueError):
            m.phi(crandn(rng, (2, 100)))

    def test_batched_leading_axes(self, rng):
        S = crandn(rng, (4, 2, 128))
        m = ScoreModel("vector-coupled", K=2)
        batched = m.phi(S)
        rows = np.stack([m.phi(S[i]) for i in range(4)])
        assert rel_err(batched, rows) < 1e-13

    def test_evaluate_reports_nu_and_rho(self, rng):
        s = crandn(rng, (256,))
        ev = ScoreModel("rational-fica").evaluate(s)
        assert np.isclose(ev.nu, np.mean(s * ev.phi))
        psi, rho = score_rational(s)
        assert np.isclose(ev.rho, rho)


class TestIntegrablePairs:
    """log_density / exact_score are a matched pair for every kind."""

    @pytest.mark.parametrize("kind,K", [("tanh-conjugate", 1),
                                        ("rational-fica", 1),
                                        ("vector-coupled", 2),
                                        ("piloted-vector", 2)])
    def test_exact_score_is_fd_gradient_of_log_density(self, rng, kind, K):
        m = ScoreModel(kind, K=K)
        N = 6
        S = crandn(rng, (K, N)) if m.is_vector else crandn(rng, (N,))
        pilot = crandn(rng, (N,)) if kind == "piloted-vector" else None

        def total(x):
            ld = m.log_density(x, pilot=pilot)
            return float(np.sum(ld))

        # score convention: phi = -d log f / d xi, gradient w.r.t. conj coords
        fd = wirtinger_fd(total, S)
        got = np.conj(-m.exact_score(S, pilot=pilot))
        assert rel_err(got, fd) < 1e-6

    def test_radial_scores_give_real_nu(self, rng):
        for kind, K in (("tanh-conjugate", 1), ("vector-coupled", 2)):
            m = ScoreModel(kind, K=K)
            S = crandn(rng, (K, 500)) if m.is_vector else crandn(rng, (500,))
            nu = np.mean(S * m.exact_score(S), axis=-1)
            assert np.max(np.abs(np.imag(nu))) < 1e-14

    def test_scaled_model_scales_both(self, rng):
        base = ScoreModel("tanh-conjugate")
        sm = ScaledModel(base, 2.5)
        s = crandn(rng, (100,))
        assert np.allclose(sm.log_density(s), 2.5 * base.log_density(s))
        assert np.allclose(sm.exact_score(s), 2.5 * base.exact_score(s))
        assert sm.kind == base.kind and sm.K == base.K


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=2**31), st.floats(min_value=0.05, max_value=20.0))
def test_phi_finite_and_scale_equivariant(seed, scale):
    rng = np.random.default_rng(seed)
    s = crandn(rng, (64,))
    m = ScoreModel("tanh-conjugate")
    phi = m.phi(scale * s)
    assert np.all(np.isfinite(phi))
    assert rel_err(phi, m.phi(s) / scale) < 1e-11
