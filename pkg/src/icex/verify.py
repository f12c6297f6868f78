r"""Numerical self-checks of the library's gradients and identities.

Every check draws its own reproducible data and exercises the public
entry points through their modules at call time, so an edited or patched
function is genuinely re-checked instead of compared against a stale
reference.  Gradients are verified against central Wirtinger finite
differences of the contrast (derivative w.r.t. conj(x), component i, is
(d/dRe x_i + 1j d/dIm x_i) / 2); identities are verified against plain
dense linear algebra.

The weighting matrix R of the contrast is frozen at the expansion point
in all difference checks: the solvers treat it as constant within an
iteration, and only under a frozen R do the closed-form gradients equal
the derivative of a fixed function.  The collapsed forms are checked at
the R values where they are exact (the inverse background covariance of
their own expansion point); the full form is checked at an arbitrary
positive definite R.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import baselines, ice, ive, mixing
from .linalg import Rng, sample_covariance
from .scores import ScaledModel, ScoreModel

__all__ = ["CheckResult", "check_gradients", "check_identities",
           "check_beamformer", "check_fixed_point", "run_all"]

FD_STEP = 1e-5

FD_TOL = 1e-5

IDENTITY_TOL = 1e-9

OG_RESIDUAL_TOL = 1e-8


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def __str__(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.name}: {self.detail}"


def _fd_wirtinger(f, x0: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central finite-difference gradient of real f w.r.t. conj(x)."""
    x0 = np.asarray(x0, dtype=np.complex128)
    grad = np.zeros_like(x0)
    for i in range(x0.size):
        e = np.zeros_like(x0)
        e[i] = 1.0
        d_re = (f(x0 + h * e) - f(x0 - h * e)) / (2.0 * h)
        d_im = (f(x0 + 1j * h * e) - f(x0 - 1j * h * e)) / (2.0 * h)
        grad[i] = 0.5 * (d_re + 1j * d_im)
    return grad


def _rel_err(got: np.ndarray, want: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(want)), 1e-30)
    return float(np.linalg.norm(got - want)) / scale


def _rand_dim(rng: Rng, lo: int, hi: int) -> int:
    return lo + int(float(rng.uniform(())) * (hi - lo + 1e-9))


def _hermitian_pd(rng: Rng, m: int) -> np.ndarray:
    M = rng.complex_normal((m, m))
    R = M @ np.conj(M.T) / m + 0.5 * np.eye(m)
    return 0.5 * (R + np.conj(R.T))


def _background_weight(a: np.ndarray, Cx: np.ndarray) -> np.ndarray:
    """Inverse covariance of the background estimate B(a) X, symmetrized."""
    B = mixing.background_basis(a)
    Cz = B @ Cx @ np.conj(B.T)
    R = np.linalg.inv(0.5 * (Cz + np.conj(Cz.T)))
    return 0.5 * (R + np.conj(R.T))


def _fd_grad_w_full(rng: Rng, N: int = 200) -> float:
    d = _rand_dim(rng, 3, 6)
    X = rng.split(0).complex_normal((d, N))
    Cx = sample_covariance(X)
    w0 = rng.split(1).complex_normal(d)
    R = _hermitian_pd(rng.split(2), d - 1)
    model = ScoreModel("tanh-conjugate")

    def f(w):
        a = mixing.couple_a_from_w(w, Cx)
        return ice.contrast(mixing.ExtractionParams(a=a, w=w), X, R, model)

    fd = _fd_wirtinger(f, w0)
    return _rel_err(ice.grad_w_full(w0, X, R, model), fd)


def _fd_grad_w(rng: Rng, N: int = 200) -> float:
    d = _rand_dim(rng, 3, 6)
    X = rng.split(0).complex_normal((d, N))
    Cx = sample_covariance(X)
    w0 = rng.split(1).complex_normal(d)
    a0 = mixing.couple_a_from_w(w0, Cx)
    R = _background_weight(a0, Cx)
    model = ScoreModel("tanh-conjugate")
    s0 = np.conj(w0) @ X
    phi0 = model.exact_score(s0)

    def f(w):
        a = mixing.couple_a_from_w(w, Cx)
        return ice.contrast(mixing.ExtractionParams(a=a, w=w), X, R, model)

    fd = _fd_wirtinger(f, w0)
    return _rel_err(ice.grad_w(w0, a0, X, phi0), fd)


def _fd_grad_a(rng: Rng, N: int = 200) -> float:
    d = _rand_dim(rng, 3, 6)
    X = rng.split(0).complex_normal((d, N))
    Cx = sample_covariance(X)
    Cxi = np.linalg.inv(Cx)
    Cxi = 0.5 * (Cxi + np.conj(Cxi.T))
    a0 = rng.split(1).complex_normal(d)
    w0 = mixing.couple_w_from_a(a0, Cx)
    R = _background_weight(a0, Cx)
    model = ScoreModel("tanh-conjugate")
    s0 = np.conj(w0) @ X
    nu0 = float(np.real(np.mean(s0 * model.exact_score(s0))))
    scaled = ScaledModel(model, 1.0 / nu0)

    def f(a):
        w = mixing.couple_w_from_a(a, Cx)
        return ice.contrast(mixing.ExtractionParams(a=a, w=w), X, R, scaled)

    fd = _fd_wirtinger(f, a0)
    return _rel_err(ice.grad_a(a0, X, model.exact_score(s0) / nu0, Cxi), fd)


def _joint_instance(rng: Rng, N: int = 200):
    K = _rand_dim(rng, 2, 3)
    d = _rand_dim(rng.split(0), 3, 6)
    X = rng.split(1).complex_normal((K, d, N))
    return ive.JointProblem(X)


def _block_background_weight(params, problem) -> np.ndarray:
    """Block-diagonal R with per-mixture inverse background covariances."""
    K, dm1 = problem.K, problem.d - 1
    R = np.zeros((K * dm1, K * dm1), dtype=np.complex128)
    for k in range(K):
        R[k * dm1:(k + 1) * dm1, k * dm1:(k + 1) * dm1] = \
            _background_weight(params.A[k], problem.Cx_blocks[k])
    return R


def _fd_grad_ive_w_full(rng: Rng) -> float:
    problem = _joint_instance(rng)
    K, d = problem.K, problem.d
    W0 = rng.split(2).complex_normal((K, d))
    params0 = ive.JointParams.from_w(W0, problem)
    R = ive._default_R(params0, problem)
    model = ScoreModel("vector-coupled", K=K)
    k = _rand_dim(rng.split(3), 0, K - 1)

    def f(wk):
        W = params0.W.copy()
        W[k] = wk
        params = ive.JointParams.from_w(W, problem)
        return ive.joint_contrast(params, problem, R, model)

    fd = _fd_wirtinger(f, params0.W[k])
    got = ive.grad_ive_w_full(k, params0, problem, R=R, model=model)
    return _rel_err(got, fd)


def _fd_grad_ive_w(rng: Rng) -> float:
    problem = _joint_instance(rng)
    K, d = problem.K, problem.d
    W0 = rng.split(2).complex_normal((K, d))
    params0 = ive.JointParams.from_w(W0, problem)
    R = _block_background_weight(params0, problem)
    model = ScoreModel("vector-coupled", K=K)
    k = _rand_dim(rng.split(3), 0, K - 1)
    S0 = np.stack([np.conj(params0.W[j]) @ problem.X_blocks[j]
                   for j in range(K)])
    phi0 = model.exact_score(S0)[k]

    def f(wk):
        W = params0.W.copy()
        W[k] = wk
        params = ive.JointParams.from_w(W, problem)
        return ive.joint_contrast(params, problem, R, model)

    fd = _fd_wirtinger(f, params0.W[k])
    return _rel_err(ive.grad_ive_w(k, params0, problem, phi0), fd)


def _fd_grad_ive_a(rng: Rng) -> float:
    problem = _joint_instance(rng)
    K, d = problem.K, problem.d
    A0 = rng.split(2).complex_normal((K, d))
    params0 = ive.JointParams.from_a(A0, problem)
    R = _block_background_weight(params0, problem)
    model = ScoreModel("vector-coupled", K=K)
    k = _rand_dim(rng.split(3), 0, K - 1)
    S0 = np.stack([np.conj(params0.W[j]) @ problem.X_blocks[j]
                   for j in range(K)])
    nu_k = float(np.real(np.mean(S0[k] * model.exact_score(S0)[k])))
    scaled = ScaledModel(model, 1.0 / nu_k)
    phi0 = model.exact_score(S0)[k] / nu_k

    def f(ak):
        A = params0.A.copy()
        A[k] = ak
        params = ive.JointParams.from_a(A, problem)
        return ive.joint_contrast(params, problem, R, scaled)

    fd = _fd_wirtinger(f, params0.A[k])
    return _rel_err(ive.grad_ive_a(k, params0, problem, phi0), fd)


_GRADIENT_CHECKS = (
    ("fd-grad-w-full", _fd_grad_w_full),
    ("fd-grad-w", _fd_grad_w),
    ("fd-grad-a", _fd_grad_a),
    ("fd-grad-ive-w-full", _fd_grad_ive_w_full),
    ("fd-grad-ive-w", _fd_grad_ive_w),
    ("fd-grad-ive-a", _fd_grad_ive_a),
)


def check_gradients(seed: int = 0, instances: int = 8,
                    tol: float = FD_TOL) -> list[CheckResult]:
    """Finite-difference checks of all six gradient entry points."""
    results = []
    for idx, (name, fn) in enumerate(_GRADIENT_CHECKS):
        root = Rng(seed).split(100 + idx)
        worst = max(fn(root.split(i)) for i in range(instances))
        results.append(CheckResult(
            name, worst <= tol,
            f"max relative error {worst:.3e} over {instances} instances "
            f"(tol {tol:.0e})"))
    return results


def check_identities(seed: int = 0, instances: int = 50) -> list[CheckResult]:
    """Exact algebraic identities of the parameterization and couplings."""
    worst = {
        "coupling-round-trip": 0.0,
        "distortionless-link": 0.0,
        "orthogonal-residual": 0.0,
        "inverse-power-identity": 0.0,
        "demixing-inverse": 0.0,
        "determinant-formula": 0.0,
        "gradient-collapse": 0.0,
        "cross-moment-routes": 0.0,
        "natural-gradient-factorization": 0.0,
    }
    model = ScoreModel("tanh-conjugate")
    for i in range(instances):
        rng = Rng(seed).split(200 + i)
        d = _rand_dim(rng, 3, 6)
        N = 200
        X = rng.split(0).complex_normal((d, N))
        Cx = sample_covariance(X)
        Cxi = np.linalg.inv(Cx)
        Cxi = 0.5 * (Cxi + np.conj(Cxi.T))
        w0 = rng.split(1).complex_normal(d)

        a = mixing.couple_a_from_w(w0, Cx)
        w = mixing.couple_w_from_a(a, Cx)
        worst["coupling-round-trip"] = max(
            worst["coupling-round-trip"], _rel_err(w, w0))
        worst["distortionless-link"] = max(
            worst["distortionless-link"],
            abs(np.vdot(w, a) - 1.0), abs(np.vdot(w0, a) - 1.0))

        B = mixing.background_basis(a)
        resid = float(np.linalg.norm(B @ (Cx @ w0)))
        worst["orthogonal-residual"] = max(worst["orthogonal-residual"],
                                           resid)

        lhs = float(np.real(np.vdot(a, Cxi @ a)))
        rhs = 1.0 / float(np.real(np.vdot(w0, Cx @ w0)))
        worst["inverse-power-identity"] = max(
            worst["inverse-power-identity"], abs(lhs - rhs) / abs(rhs))

        mm = mixing.assemble(mixing.ExtractionParams(a=a, w=w0))
        worst["demixing-inverse"] = max(
            worst["demixing-inverse"],
            float(np.linalg.norm(mm.W_ice @ mm.A_ice - np.eye(d))))
        det_lu = np.linalg.det(mm.W_ice)
        worst["determinant-formula"] = max(
            worst["determinant-formula"],
            abs(det_lu - mm.det_W) / max(abs(mm.det_W), 1e-30))

        R = _background_weight(a, Cx)
        s = np.conj(w0) @ X
        full = ice.grad_w_full(w0, X, R, model)
        collapsed = ice.grad_w(w0, a, X, model.exact_score(s))
        worst["gradient-collapse"] = max(
            worst["gradient-collapse"], _rel_err(full, collapsed))

        problem = _joint_instance(rng.split(2), N=64)
        params = ive.JointParams.from_w(
            rng.split(3).complex_normal((problem.K, problem.d)), problem)
        C = problem.cross_covariance()
        dd = problem.d
        for ell in range(problem.K):
            for kk in range(problem.K):
                data_route = ive.theta(params, problem, ell, kk)
                B_ell = mixing.background_basis(params.A[ell])
                block = C[ell * dd:(ell + 1) * dd, kk * dd:(kk + 1) * dd]
                cov_route = B_ell @ block @ params.W[kk]
                # theta^{kk} = 0 under coupling, so scale by the factors
                # rather than by the (possibly zero) value itself
                scale = (np.linalg.norm(B_ell) * np.linalg.norm(block)
                         * np.linalg.norm(params.W[kk]))
                worst["cross-moment-routes"] = max(
                    worst["cross-moment-routes"],
                    float(np.linalg.norm(data_route - cov_route)) / scale)

        Wsq = np.eye(d) + 0.3 * rng.split(4).complex_normal((d, d))
        bs = baselines.bs_delta(Wsq, X)
        ng = baselines.ng_delta(Wsq, X)
        worst["natural-gradient-factorization"] = max(
            worst["natural-gradient-factorization"],
            _rel_err(ng, np.conj(Wsq.T) @ Wsq @ bs))

    results = []
    for name, err in worst.items():
        tol = OG_RESIDUAL_TOL if name == "orthogonal-residual" \
            else IDENTITY_TOL
        results.append(CheckResult(
            name, err <= tol,
            f"max deviation {err:.3e} over {instances} instances "
            f"(tol {tol:.0e})"))
    return results


def check_beamformer(seed: int = 0, instances: int = 20,
                     tol: float = 1e-9) -> CheckResult:
    """Minimum-power weights with the model covariance recover the source.

    With x = A u, exactly known steering column a = A e_1 and the analytic
    covariance A diag(var) A^H, the distortionless weights return u_1
    sample for sample, whatever the empirical correlations are.
    """
    worst = 0.0
    for i in range(instances):
        rng = Rng(seed).split(400 + i)
        d = _rand_dim(rng, 2, 8)
        N = 200
        A = np.eye(d) + 0.5 * rng.split(0).complex_normal((d, d))
        var = 0.5 + np.asarray(rng.split(1).uniform(d))
        S = rng.split(2).complex_normal((d, N)) * np.sqrt(var)[:, None]
        X = A @ S
        Cx = A @ np.diag(var) @ np.conj(A.T)
        Cx = 0.5 * (Cx + np.conj(Cx.T))
        s_hat = mixing.mpdr(A[:, 0], Cx, X)
        worst = max(worst, _rel_err(s_hat, S[0]))
    return CheckResult(
        "beamformer-exact-recovery", worst <= tol,
        f"max relative error {worst:.3e} over {instances} instances "
        f"(tol {tol:.0e})")


def check_fixed_point(seed: int = 0, problems: int = 5, iterations: int = 12,
                      tol: float = 1e-8) -> CheckResult:
    """Fixed-point updates match the preconditioned gradient rewrite.

    Both routes are run for a fixed number of iterations (convergence
    testing disabled) and compared iterate by iterate after aligning the
    irrelevant global phase.
    """
    worst = 0.0
    for i in range(problems):
        rng = Rng(seed).split(600 + i)
        d, N = 5, 400
        A = np.eye(d) + 0.4 * rng.split(0).complex_normal((d, d))
        S = rng.split(1).complex_normal((d, N))
        S[0] *= np.abs(rng.split(2).complex_normal(N))
        X = A @ S
        w_ini = rng.split(3).complex_normal(d)
        _, _, tr_fp = baselines.fica_one_unit(
            X, w_ini, tol=0.0, max_iter=iterations, keep_iterates=True)
        _, _, tr_gr = baselines.fica_via_gradient(
            X, w_ini, tol=0.0, max_iter=iterations, keep_iterates=True)
        for w_fp, w_gr in zip(tr_fp.w_iterates, tr_gr.w_iterates):
            z = np.vdot(w_fp, w_gr)
            aligned = w_gr * np.conj(z) / abs(z)
            worst = max(worst, _rel_err(aligned, w_fp))
    return CheckResult(
        "fixed-point-gradient-equivalence", worst <= tol,
        f"max per-iterate deviation {worst:.3e} over {problems} problems x "
        f"{iterations} iterations (tol {tol:.0e})")


def run_all(seed: int = 0) -> list[CheckResult]:
    """Every self-check at its default size, in a stable order."""
    results = check_gradients(seed)
    results.extend(check_identities(seed))
    results.append(check_beamformer(seed))
    results.append(check_fixed_point(seed))
    return results
