"""Gradients, identities and solver behaviour of the single-mixture engine."""

from dataclasses import replace
from types import SimpleNamespace

import numpy as np
import pytest

from icex import ice
from icex.ice import (
    SolverConfig,
    SolverError,
    contrast,
    grad_a,
    grad_w,
    grad_w_full,
    ogice_a,
    ogice_s,
    ogice_w,
    preconditioned_step,
    run_batch,
    switching_criterion,
)
from icex.mixing import DegenerateParameterError, DegenerateSignalError
from icex.scores import ScaledModel, ScoreModel

from helpers import (
    background,
    couple_a,
    couple_w,
    crandn,
    frozen_R,
    hermitian_pd,
    ice_instance,
    rel_err,
    sample_cov,
    wirtinger_fd,
)


class TestContrast:
    def test_matches_direct_formula(self, rng):
        d, N = 4, 160
        X = crandn(rng, (d, N))
        w = crandn(rng, d)
        a = couple_a(w, sample_cov(X))
        R = hermitian_pd(rng, d - 1)
        model = ScoreModel("rational-fica")
        got = contrast(SimpleNamespace(a=a, w=w), X, R, model)
        s = w.conj() @ X
        Z = background(a) @ X
        quad = np.mean(np.real(np.einsum("in,ij,jn->n", Z.conj(), R, Z)))
        want = (np.mean(model.log_density(s)) - quad
                + (d - 2) * np.log(np.abs(a[0]) ** 2))
        assert abs(got - want) < 1e-12 * max(1.0, abs(want))

    def test_inverse_background_weighting_gives_constant_quad(self, rng):
        # at R = Cz^{-1} the quadratic term is exactly tr I = d - 1
        d, N = 5, 300
        X = crandn(rng, (d, N))
        Cx = sample_cov(X)
        w = crandn(rng, d)
        a = couple_a(w, Cx)
        model = ScoreModel("rational-fica")
        got = contrast(SimpleNamespace(a=a, w=w), X, frozen_R(a, Cx), model)
        s = w.conj() @ X
        want = (np.mean(model.log_density(s)) - (d - 1)
                + (d - 2) * np.log(np.abs(a[0]) ** 2))
        assert abs(got - want) < 1e-9


class TestGradients:
    @pytest.mark.parametrize("kind", ["tanh-conjugate", "rational-fica"])
    def test_grad_w_full_matches_finite_differences(self, rng, kind):
        d, N = 4, 150
        X = crandn(rng, (d, N))
        Cx = sample_cov(X)
        w0 = crandn(rng, d)
        R = hermitian_pd(rng, d - 1)
        model = ScoreModel(kind)

        def f(w):
            return contrast(SimpleNamespace(a=couple_a(w, Cx), w=w),
                            X, R, model)

        fd = wirtinger_fd(f, w0)
        assert rel_err(grad_w_full(w0, X, R, model), fd) < 1e-6

    def test_substituted_score_only_moves_the_data_term(self, rng):
        d, N = 4, 120
        X = crandn(rng, (d, N))
        w = crandn(rng, d)
        R = hermitian_pd(rng, d - 1)
        model = ScoreModel("tanh-conjugate")
        phi = ScoreModel("rational-fica").phi(w.conj() @ X)
        base = grad_w_full(w, X, R, model, phi=np.zeros(N))
        got = grad_w_full(w, X, R, model, phi=phi)
        assert rel_err(got - base, -(X @ phi) / N) < 1e-12

    def test_grad_w_collapse_at_inverse_background_weighting(self, rng):
        d, N = 5, 250
        X = crandn(rng, (d, N))
        Cx = sample_cov(X)
        w = crandn(rng, d)
        a = couple_a(w, Cx)
        model = ScoreModel("tanh-conjugate")
        phi = model.exact_score(w.conj() @ X)
        full = grad_w_full(w, X, frozen_R(a, Cx), model, phi=phi)
        assert rel_err(full, grad_w(w, a, X, phi)) < 1e-9

    def test_grad_w_matches_finite_differences(self, rng):
        d, N = 4, 150
        X = crandn(rng, (d, N))
        Cx = sample_cov(X)
        w0 = crandn(rng, d)
        a0 = couple_a(w0, Cx)
        R = frozen_R(a0, Cx)
        model = ScoreModel("tanh-conjugate")
        phi0 = model.exact_score(w0.conj() @ X)

        def f(w):
            return contrast(SimpleNamespace(a=couple_a(w, Cx), w=w),
                            X, R, model)

        fd = wirtinger_fd(f, w0)
        assert rel_err(grad_w(w0, a0, X, phi0), fd) < 1e-6

    def test_grad_a_matches_finite_differences(self, rng):
        d, N = 4, 150
        X = crandn(rng, (d, N))
        Cx = sample_cov(X)
        Cxi = np.linalg.inv(Cx)
        Cxi = 0.5 * (Cxi + Cxi.conj().T)
        a0 = crandn(rng, d)
        w0 = couple_w(a0, Cx)
        R = frozen_R(a0, Cx)
        model = ScoreModel("tanh-conjugate")
        s0 = w0.conj() @ X
        phi0 = model.exact_score(s0)
        nu0 = float(np.real(np.mean(s0 * phi0)))
        scaled = ScaledModel(model, 1.0 / nu0)

        def f(a):
            return contrast(SimpleNamespace(a=a, w=couple_w(a, Cx)),
                            X, R, scaled)

        fd = wirtinger_fd(f, a0)
        assert rel_err(grad_a(a0, X, phi0 / nu0, Cxi), fd) < 1e-6

    def test_grad_a_rejects_indefinite_inverse(self, rng):
        d, N = 3, 50
        X = crandn(rng, (d, N))
        a = crandn(rng, d)
        phi = crandn(rng, N)
        with pytest.raises(DegenerateSignalError):
            grad_a(a, X, phi, -np.eye(d))


class TestPreconditionedStep:
    def test_formula(self, rng):
        d = 5
        w = crandn(rng, d)
        delta = crandn(rng, d)
        D = crandn(rng, (d, d))
        got = preconditioned_step(w, delta, D, 0.3)
        assert rel_err(got, w + 0.3 * (D.conj().T @ (D @ delta))) < 1e-14

    def test_identity_reduces_to_plain_step(self, rng):
        w = crandn(rng, 4)
        delta = crandn(rng, 4)
        got = preconditioned_step(w, delta, np.eye(4), 0.1)
        assert rel_err(got, w + 0.1 * delta) < 1e-14


class TestSwitchingCriterion:
    def test_scale_invariant_in_a_and_cx(self, rng):
        d = 5
        a = crandn(rng, d)
        Cx = hermitian_pd(rng, d)
        base = switching_criterion(a, Cx)
        assert abs(switching_criterion((2.0 - 1.5j) * a, Cx) - base) < 1e-10
        assert abs(switching_criterion(a, 7.0 * Cx) - base) < 1e-10

    def test_strong_steered_signal_scores_low(self, rng):
        d = 6
        a = crandn(rng, d)
        Cx = 100.0 * np.outer(a, a.conj()) + np.eye(d)
        at_truth = switching_criterion(a, Cx)
        at_random = switching_criterion(crandn(rng, d), Cx)
        assert at_truth < 0.1
        assert at_truth < 0.1 * at_random

    def test_zero_vector_rejected(self):
        with pytest.raises(DegenerateParameterError):
            switching_criterion(np.zeros(4), np.eye(4))


class TestSolverConfig:
    def test_defaults(self):
        cfg = SolverConfig()
        assert cfg.step_mu == 0.1 and cfg.tol == 1e-3
        assert cfg.max_iter == 5000 and cfg.Q == 10 and cfg.tau == 0.1
        assert cfg.precondition == "none" and not cfg.keep_iterates

    @pytest.mark.parametrize("kwargs", [
        {"step_mu": 0.0},
        {"step_mu": -1.0},
        {"tol": 0.0},
        {"max_iter": 0},
        {"Q": 0},
        {"tau": -0.5},
        {"precondition": "qr"},
    ])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            SolverConfig(**kwargs)


class TestSolvers:
    CFG = SolverConfig(step_mu=0.1, tol=1e-3, max_iter=5000)

    def test_ogice_w_extracts_the_heavy_source(self, rng):
        inst = ice_instance(rng, d=4, N=2000)
        w0 = couple_w(inst["a"], inst["Cx"])
        a, w, trace = ogice_w(inst["X"], w0, config=self.CFG)
        assert trace.converged
        s_hat = w.conj() @ inst["X"]
        s = inst["S"][0]
        corr = abs(np.vdot(s_hat, s)) / (np.linalg.norm(s_hat)
                                         * np.linalg.norm(s))
        assert corr > 0.95

    def test_returned_pair_is_coupled(self, rng):
        inst = ice_instance(rng, d=4, N=1500)
        for solver, start in ((ogice_w, couple_w(inst["a"], inst["Cx"])),
                              (ogice_a, inst["a"]),
                              (ogice_s, inst["a"])):
            a, w, trace = solver(inst["X"], start, config=self.CFG)
            assert trace.converged
            assert abs(np.vdot(w, a) - 1.0) < 1e-8
            assert rel_err(a, couple_a(w, sample_cov(inst["X"]))) < 1e-8

    def test_final_update_norm_is_below_tol(self, rng):
        inst = ice_instance(rng, d=4, N=1500)
        model = ScoreModel("tanh-conjugate")
        a, w, trace = ogice_w(inst["X"], couple_w(inst["a"], inst["Cx"]),
                              config=self.CFG)
        s = w.conj() @ inst["X"]
        phi = model.phi(s)
        nu = np.mean(s * phi)
        delta = grad_w(w, a, inst["X"], phi / nu)
        assert np.linalg.norm(delta) < 2.0 * self.CFG.tol

    def test_max_iter_returns_last_iterate_unconverged(self, rng):
        inst = ice_instance(rng, d=4, N=400)
        cfg = replace(self.CFG, max_iter=3)
        a, w, trace = ogice_w(inst["X"], couple_w(inst["a"], inst["Cx"]),
                              config=cfg)
        assert not trace.converged
        assert trace.n_iter == 3
        assert trace.failure is None
        assert np.all(np.isfinite(w))

    def test_singular_covariance_raises_with_trace(self, rng):
        X = crandn(rng, (4, 200))
        X[1] = X[0]
        with pytest.raises(SolverError) as err:
            ogice_w(X, crandn(rng, 4), config=self.CFG)
        assert err.value.trace.failure == "singular-covariance"
        assert err.value.trace.n_iter == 0

    def test_trace_records_iterates_and_branches(self, rng):
        inst = ice_instance(rng, d=4, N=800)
        cfg = replace(self.CFG, keep_iterates=True, max_iter=60, Q=7)
        a, w, trace = ogice_s(inst["X"], inst["a"], config=cfg)
        n = trace.n_iter
        assert trace.grad_norms.shape == (n,)
        assert trace.a_iterates.shape == (n, 4)
        assert trace.w_iterates.shape == (n, 4)
        assert len(trace.branches) == n and set(trace.branches) <= {"w", "a"}
        assert trace.criterion_iters.tolist() == list(range(0, n, 7))
        assert np.all(np.isfinite(trace.criterion_values))
        # final iterate snapshot equals the returned pair
        assert rel_err(trace.w_iterates[-1], w) < 1e-12

    def test_switch_tau_zero_reduces_to_a_solver(self, rng):
        inst = ice_instance(rng, d=4, N=900)
        cfg = replace(self.CFG, step_mu=0.05, max_iter=40, tol=1e-12)
        a_s, w_s, tr_s = ogice_s(inst["X"], inst["a"],
                                 config=replace(cfg, tau=0.0))
        a_a, w_a, tr_a = ogice_a(inst["X"], inst["a"], config=cfg)
        assert tr_s.n_iter == tr_a.n_iter
        assert rel_err(a_s, a_a) < 1e-10
        assert rel_err(w_s, w_a) < 1e-10

    def test_switch_tau_inf_reduces_to_w_solver(self, rng):
        inst = ice_instance(rng, d=4, N=900)
        cfg = replace(self.CFG, step_mu=0.05, max_iter=40, tol=1e-12)
        w0 = couple_w(inst["a"], sample_cov(inst["X"]))
        a_s, w_s, tr_s = ogice_s(inst["X"], inst["a"],
                                 config=replace(cfg, tau=np.inf))
        a_w, w_w, tr_w = ogice_w(inst["X"], w0, config=cfg)
        assert tr_s.n_iter == tr_w.n_iter
        assert rel_err(w_s, w_w) < 1e-8

    def test_whiten_preconditioner_first_step(self, rng):
        inst = ice_instance(rng, d=4, N=600)
        X = inst["X"]
        Cx = X @ X.conj().T / X.shape[1]
        Cx = 0.5 * (Cx + Cx.conj().T)
        Cxi = np.linalg.inv(Cx)
        Cxi = 0.5 * (Cxi + Cxi.conj().T)
        w0 = couple_w(inst["a"], Cx)
        cfg = replace(self.CFG, max_iter=1, precondition="whiten",
                      keep_iterates=True)
        a, w, trace = ogice_w(X, w0, config=cfg)
        model = ScoreModel("tanh-conjugate")
        s0 = w0.conj() @ X
        phi0 = model.phi(s0)
        nu0 = np.mean(s0 * phi0)
        delta0 = grad_w(w0, couple_a(w0, Cx), X, phi0 / nu0)
        assert rel_err(trace.w_iterates[0], w0 + 0.1 * (Cxi @ delta0)) < 1e-10

    def test_gradient_step_raises_frozen_contrast(self, rng):
        # a small step along the conj-gradient gains ~2 mu ||g||^2 on the
        # fixed-weighting objective
        inst = ice_instance(rng, d=4, N=1000)
        X, Cx = inst["X"], inst["Cx"]
        model = ScoreModel("rational-fica")
        w0 = couple_w(inst["a"], Cx)
        R = frozen_R(couple_a(w0, Cx), Cx)

        def f(w):
            return contrast(SimpleNamespace(a=couple_a(w, Cx), w=w),
                            X, R, model)

        g = grad_w_full(w0, X, R, model)
        mu = 1e-4
        gain = f(w0 + mu * g) - f(w0)
        expect = 2.0 * mu * np.linalg.norm(g) ** 2
        assert gain > 0.0
        assert abs(gain - expect) < 0.1 * expect


class TestRunBatch:
    def test_validation(self, rng):
        X = crandn(rng, (3, 4, 100))
        start = crandn(rng, (3, 4))
        with pytest.raises(ValueError):
            run_batch(X[0], start[0], "w")
        with pytest.raises(ValueError):
            run_batch(X, start[:2], "w")
        with pytest.raises(ValueError):
            run_batch(X, start, "x")
        with pytest.raises(ValueError):
            run_batch(X, start, "w", pilot=crandn(rng, (3, 99)))

    def test_matches_serial_runs_with_mixed_freezing(self, rng):
        d, N = 4, 700
        insts = [ice_instance(rng, d, N) for _ in range(3)]
        X = np.stack([i["X"] for i in insts])
        X[1, 2] = X[1, 0]          # row 1 freezes at setup
        start = np.stack([couple_w(i["a"], sample_cov(x))
                          for i, x in zip(insts, X)])
        cfg = SolverConfig(step_mu=0.1, tol=1e-3, max_iter=400)
        batch = run_batch(X, start, "w", config=cfg, record=True)
        assert batch["failure"][1] == "singular-covariance"
        assert batch["iters"][1] == 0
        assert np.all(np.isnan(batch["grad_norms"][:, 1]))
        for b in (0, 2):
            one = run_batch(X[b:b + 1], start[b:b + 1], "w", config=cfg)
            assert batch["iters"][b] == one["iters"][0]
            assert batch["converged"][b] == one["converged"][0]
            assert rel_err(batch["a"][b], one["a"][0]) < 1e-10
            assert rel_err(batch["w"][b], one["w"][0]) < 1e-10

    def test_record_shapes(self, rng):
        d, N, B = 3, 300, 2
        X = np.stack([ice_instance(rng, d, N)["X"] for _ in range(B)])
        start = crandn(rng, (B, d))
        cfg = SolverConfig(max_iter=25, tol=1e-9)
        out = run_batch(X, start, "s", config=cfg, record=True,
                        record_iterates=True)
        T = out["grad_norms"].shape[0]
        assert out["branches"].shape == (T, B)
        assert out["a_iterates"].shape == (T, B, d)
        assert out["w_iterates"].shape == (T, B, d)
        assert all(isinstance(it, int) for it, _ in out["criterion"])

    def test_scalar_model_rejects_pilot(self, rng):
        X = crandn(rng, (2, 3, 120))
        start = crandn(rng, (2, 3))
        with pytest.raises(ValueError):
            run_batch(X, start, "w", pilot=crandn(rng, (2, 120)))
