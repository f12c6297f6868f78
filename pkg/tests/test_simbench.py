"""Source generators, trial construction and benchmark plumbing."""

from dataclasses import replace

import numpy as np
import pytest

from icex.linalg import Rng
from icex.simbench import (
    ALGORITHMS,
    BACKGROUNDS,
    CellResult,
    ExperimentConfig,
    Trial,
    TrialConfig,
    build_trial,
    gen_circular_gaussian,
    gen_circular_laplace,
    gen_dependent_sois,
    gen_mixing_matrix,
    histogram_counts,
    perturb_init,
    run_cell,
    run_experiment,
    serial_matches_batch,
    sir_db,
    trial_inits,
    trial_seed,
)
from icex.simbench import _sir_batch

from helpers import crandn, rel_err


class TestGenerators:
    def test_laplace_moments(self):
        s = gen_circular_laplace(2, 100_000, Rng(5))
        power = np.mean(np.abs(s) ** 2, axis=1)
        assert np.max(np.abs(power - 1.0)) < 0.02
        # circularity: the pseudo-variance vanishes
        assert np.max(np.abs(np.mean(s * s, axis=1))) < 0.02
        # E|s|^4 = 10/3 for this law, vs 2 for a circular Gaussian
        kurt = np.mean(np.abs(s) ** 4, axis=1)
        assert np.all(kurt > 2.9) and np.all(kurt < 3.8)

    def test_gaussian_moments(self):
        s = gen_circular_gaussian(2, 100_000, Rng(6))
        power = np.mean(np.abs(s) ** 2, axis=1)
        assert np.max(np.abs(power - 1.0)) < 0.02
        assert np.max(np.abs(np.mean(s * s, axis=1))) < 0.02
        kurt = np.mean(np.abs(s) ** 4, axis=1)
        assert np.all(kurt > 1.8) and np.all(kurt < 2.2)

    def test_dependent_sois_white_but_envelope_correlated(self):
        K, N = 3, 10_000
        S = gen_dependent_sois(K, N, Rng(7))
        C = S @ S.conj().T / N
        assert np.max(np.abs(C - np.eye(K))) < 0.05
        e = np.abs(S) ** 2
        e -= e.mean(axis=1, keepdims=True)
        r01 = np.real(np.mean(e[0] * e[1])) / (np.std(e[0]) * np.std(e[1]))
        assert r01 > 0.05

    def test_dependent_sois_single_row_is_laplace_stream(self):
        got = gen_dependent_sois(1, 500, Rng(8))
        want = gen_circular_laplace(1, 500, Rng(8).split(0))
        assert rel_err(got, want) == 0.0

    def test_mixing_matrix_entry_ranges_and_conditioning(self):
        for seed in range(5):
            A = gen_mixing_matrix(5, Rng(seed))
            assert np.all(A.real >= 1.0) and np.all(A.real < 2.0)
            assert np.all(A.imag >= 0.0) and np.all(A.imag < 1.0)
            assert np.linalg.cond(A) <= 1e6
        assert rel_err(gen_mixing_matrix(5, Rng(3)),
                       gen_mixing_matrix(5, Rng(3))) == 0.0


class TestTrialConstruction:
    CFG = TrialConfig(d=5, K=3, N=400, seed=11)

    def test_validation(self):
        with pytest.raises(ValueError):
            TrialConfig(background="pink-noise")
        with pytest.raises(ValueError):
            TrialConfig(d=1)
        with pytest.raises(ValueError):
            TrialConfig(N=3, d=6)

    def test_exact_powers_and_assembly(self):
        tr = build_trial(self.CFG)
        K, d, N = 3, 5, 400
        assert tr.X_blocks.shape == (K, d, N)
        sr_lin = 10.0 ** (tr.sr_db / 10.0)
        soi_power = np.mean(np.abs(tr.soi) ** 2, axis=1)
        assert np.max(np.abs(soi_power - sr_lin)) < 1e-12 * np.max(sr_lin)
        assert np.all(np.isin(tr.sr_db, self.CFG.sr_choices_db))
        # X = A [soi; bg] means B(a_true) X has no target component:
        # residual after removing the reconstructed background is the soi
        for k in range(K):
            u = np.linalg.solve(tr.A_blocks[k], tr.X_blocks[k])
            assert rel_err(u[0], tr.soi[k]) < 1e-10
            bg_power = np.mean(np.abs(u[1:]) ** 2, axis=1)
            assert np.max(np.abs(bg_power - 1.0)) < 1e-10
        assert np.all(tr.variances[:, 0] == sr_lin)
        assert np.all(tr.variances[:, 1:] == 1.0)

    def test_pilot_is_unit_combination_of_targets(self):
        tr = build_trial(self.CFG)
        # solving for the combination recovers the pilot exactly
        coef, *_ = np.linalg.lstsq(tr.soi.T, tr.pilot, rcond=None)
        assert rel_err(coef @ tr.soi, tr.pilot) < 1e-10
        assert abs(np.linalg.norm(coef) - 1.0) < 1e-10

    def test_deterministic(self):
        t1 = build_trial(self.CFG)
        t2 = build_trial(self.CFG)
        assert rel_err(t1.X_blocks, t2.X_blocks) == 0.0
        assert rel_err(t1.pilot, t2.pilot) == 0.0


class TestPerturbation:
    def test_exact_size_and_orthogonality(self, rng):
        a = crandn(rng, 6)
        for eps_sq in (1e-3, 1e-1, 1.0, 4.0):
            a_ini = perturb_init(a, eps_sq, Rng(3))
            e = a_ini - a
            assert abs(np.linalg.norm(e) ** 2 - eps_sq) < 1e-12 * max(1, eps_sq)
            assert abs(np.vdot(a, e)) < 1e-12 * np.linalg.norm(a)

    def test_zero_size_returns_truth(self, rng):
        a = crandn(rng, 4)
        out = perturb_init(a, 0.0, Rng(0))
        assert rel_err(out, a) == 0.0
        with pytest.raises(ValueError):
            perturb_init(a, -1.0, Rng(0))

    def test_direction_shared_across_sizes(self):
        tr = build_trial(TrialConfig(d=5, K=2, N=300, seed=9))
        e1 = trial_inits(tr, 1e-2) - tr.a_true
        e2 = trial_inits(tr, 1.0) - tr.a_true
        assert rel_err(e1 / np.sqrt(1e-2), e2 / np.sqrt(1.0)) < 1e-12


class TestSir:
    def test_equal_leakage_hand_value(self):
        # w picks up every unit-power source equally: SIR = 1/(d-1)
        d = 6
        got = sir_db(np.eye(d)[:, 0], np.ones((d, d)), np.ones(d))
        assert abs(got - 10.0 * np.log10(1.0 / (d - 1))) < 1e-12

    def test_caps(self):
        A = np.eye(3)
        assert sir_db(A[:, 0], A, [1.0, 0.0, 0.0]) == 150.0
        assert sir_db(A[:, 1], A, [0.0, 1.0, 1.0]) == -150.0

    def test_batch_matches_scalar(self, rng):
        m, d = 40, 5
        W = crandn(rng, (m, d))
        A = crandn(rng, (m, d, d))
        V = np.abs(crandn(rng, (m, d))) ** 2
        V[0, 1:] = 0.0      # force a +cap entry
        W[1] = 0.0          # force a -cap entry
        got = _sir_batch(W, A, V)
        want = np.array([sir_db(W[i], A[i], V[i]) for i in range(m)])
        assert np.max(np.abs(got - want)) < 1e-12


class TestHistogram:
    def test_counts_and_clipping(self):
        vals = [-1000.0, -49.9, 0.5, 49.9, 1000.0]
        edges, counts = histogram_counts(vals)
        assert len(edges) == len(counts) + 1
        assert counts.sum() == len(vals)
        assert counts[0] == 2 and counts[-1] == 2
        assert edges[0] == -50.0 and edges[-1] == 50.0


class TestExperimentPlumbing:
    SMALL = ExperimentConfig(d=4, K=2, N=250, trials=3,
                             epsilon_sq=(0.1,),
                             backgrounds=("circular-laplace",),
                             algorithms=("mpdr_ini", "fica"),
                             seed=123)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ExperimentConfig(backgrounds=("white",))
        with pytest.raises(ValueError):
            ExperimentConfig(algorithms=("gradient-descent",))
        with pytest.raises(ValueError):
            ExperimentConfig(trials=0)
        with pytest.raises(ValueError):
            ExperimentConfig(epsilon_sq=(0.1, 0.1))

    def test_trial_seed_distinct_and_stable(self):
        seen = {trial_seed(0, b, t) for b in range(2) for t in range(50)}
        assert len(seen) == 100
        assert trial_seed(0, 1, 7) == trial_seed(0, 1, 7)

    def test_run_cell_deterministic(self):
        r1 = run_cell(self.SMALL, "fica", "circular-laplace", 0.1)
        r2 = run_cell(self.SMALL, "fica", "circular-laplace", 0.1)
        assert np.array_equal(r1.sir, r2.sir)
        assert r1.row == r2.row
        assert r1.sir.shape == (self.SMALL.trials * self.SMALL.K,)

    def test_zero_perturbation_makes_ini_oracle(self):
        cfg = replace(self.SMALL, epsilon_sq=(0.0,))
        oracle = run_cell(cfg, "mpdr_oracle", "circular-laplace", 0.0)
        ini = run_cell(cfg, "mpdr_ini", "circular-laplace", 0.0)
        assert np.array_equal(oracle.sir, ini.sir)

    def test_unknown_algorithm_rejected(self):
        with pytest.raises(ValueError):
            run_cell(self.SMALL, "oracle", "circular-laplace", 0.1)

    def test_run_experiment_order_and_rows(self):
        res = run_experiment(self.SMALL)
        assert [(r.algorithm, r.epsilon_sq) for r in res] == [
            ("mpdr_ini", 0.1), ("fica", 0.1)]
        for r in res:
            assert set(r.row) == {"algorithm", "background", "epsilon_sq",
                                  "trials", "success_rate", "sir_mean_db",
                                  "sir_median_db", "mean_iters"}
            assert r.row["trials"] == 6
            assert 0.0 <= r.row["success_rate"] <= 1.0

    def test_parallel_matches_serial(self):
        assert serial_matches_batch(replace(self.SMALL, jobs=2))
