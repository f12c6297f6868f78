r"""Joint extraction of one dependent signal per mixture from K mixtures.

Each of K mixtures follows its own single-signal model
x^k(n) = a^k s^k(n) + y^k(n), and the target signals s^1..s^K are mutually
dependent (for example, scaled copies observed by separated arrays).  A
joint source density f(s^1..s^K) couples the K extraction problems through
the score, while the mixing parameters stay per-mixture:

    J = mean log f(s_hat^1..s_hat^K)
        - sum_{i,j} mean (x^i)^H (B^i)^H R^{ij} B^j x^j
        + sum_k (d - 2) log |gamma^k|^2.

With every pair (a^k, w^k) coupled through its own sample covariance, the
off-diagonal weights R^{ij} multiply cross-moments

    theta^{lk} = Z_hat^l (s_hat^k)^H / N = B^l Cx^{lk} w^k

which vanish for l = k (the orthogonal constraint).  At R equal to the
inverse of the stacked background covariance, the w-gradient for mixture k
collapses to the same form as the single-mixture solver,

    grad^k = a^k - X^k phi^k(s_hat^1..s_hat^K)^T / N,

except that the score phi^k now depends on all K extracted signals; the
a-side mirrors it through Cx^{-1}.  :func:`grad_ive_w_full` keeps the
cross-moment correction term so the collapsed form can be verified.

Solvers :func:`ogive_w`, :func:`ogive_a` and :func:`ogive_s` iterate all K
mixtures in lock step: each iteration first re-couples and extracts every
mixture, then evaluates the joint score once and updates every mixture.
The update of mixture k reads the iteration-start signals of all others,
never fresher ones, so the result does not depend on mixture order.  With
K = 1 each solver reduces to its single-mixture counterpart exactly.

:func:`run_joint_batch` advances a batch of independent joint problems and
freezes each as it converges, exactly like :func:`icex.ice.run_batch`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import sample_covariance
from .mixing import LINK_TOL, background_basis
from .scores import NU_FLOOR, ScoreModel
from .ice import (
    DIVERGENCE_NORM,
    SolverConfig,
    SolverError,
    _RAISING_FAILURES,
    _mv,
    _switch_batch,
    _vdot_rows,
)

__all__ = [
    "JointProblem",
    "JointParams",
    "JointSolverTrace",
    "theta",
    "joint_contrast",
    "grad_ive_w_full",
    "grad_ive_w",
    "grad_ive_a",
    "run_joint_batch",
    "ogive_w",
    "ogive_a",
    "ogive_s",
]


@dataclass
class JointProblem:
    """K mixtures observed in parallel plus optional side information.

    Attributes:
        X_blocks: (K, d, N) array, one mixture per leading index.
        cross_cov: optional (K d, K d) covariance of the stacked channels;
            validated against the per-mixture sample covariances when given
            and computed on demand otherwise.
        pilot: optional length-N signal dependent on the targets, used by
            piloted score models.
        Cx_blocks: (K, d, d) per-mixture sample covariances (computed).
    """

    X_blocks: np.ndarray
    cross_cov: np.ndarray | None = None
    pilot: np.ndarray | None = None
    Cx_blocks: np.ndarray = field(init=False)

    def __post_init__(self):
        X = np.asarray(self.X_blocks, dtype=np.complex128)
        if X.ndim != 3:
            raise ValueError("X_blocks must have shape (K, d, N)")
        K, d, N = X.shape
        if d < 2 or N < d:
            raise ValueError("need d >= 2 channels and N >= d samples")
        self.X_blocks = X
        self.Cx_blocks = np.stack([sample_covariance(X[k]) for k in range(K)])
        if self.pilot is not None:
            p = np.asarray(self.pilot, dtype=np.complex128).reshape(-1)
            if p.shape[0] != N:
                raise ValueError("pilot length must match the sample count")
            self.pilot = p
        if self.cross_cov is not None:
            C = np.asarray(self.cross_cov, dtype=np.complex128)
            if C.shape != (K * d, K * d):
                raise ValueError("cross_cov must have shape (K d, K d)")
            for k in range(K):
                blk = C[k * d:(k + 1) * d, k * d:(k + 1) * d]
                if not np.allclose(blk, self.Cx_blocks[k], atol=1e-10):
                    raise ValueError(
                        "cross_cov diagonal blocks disagree with the "
                        "per-mixture sample covariances")
            self.cross_cov = C

    @property
    def K(self) -> int:
        return self.X_blocks.shape[0]

    @property
    def d(self) -> int:
        return self.X_blocks.shape[1]

    @property
    def N(self) -> int:
        return self.X_blocks.shape[2]

    def cross_covariance(self) -> np.ndarray:
        """The (K d, K d) stacked covariance, computing and caching it."""
        if self.cross_cov is None:
            K, d, N = self.X_blocks.shape
            Xs = self.X_blocks.reshape(K * d, N)
            C = Xs @ np.conj(Xs.T) / N
            self.cross_cov = 0.5 * (C + np.conj(C.T))
        return self.cross_cov

    def cross_block(self, i: int, j: int) -> np.ndarray:
        """Cx^{ij} = X^i (X^j)^H / N as a (d, d) view of the stacked matrix."""
        d = self.d
        return self.cross_covariance()[i * d:(i + 1) * d, j * d:(j + 1) * d]


@dataclass
class JointParams:
    """Per-mixture (a^k, w^k) rows with every pair linked by w^H a = 1."""

    A: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=np.complex128)
        W = np.asarray(self.W, dtype=np.complex128)
        if A.ndim != 2 or A.shape != W.shape:
            raise ValueError("A and W must be matching (K, d) arrays")
        link = np.einsum("ki,ki->k", np.conj(W), A)
        if np.any(np.abs(link - 1.0) > LINK_TOL):
            raise ValueError("every row must satisfy w^H a = 1")
        self.A, self.W = A, W

    @classmethod
    def from_a(cls, A, problem: JointProblem) -> "JointParams":
        """Couple w^k = Cx^{-1} a^k / (a^H Cx^{-1} a^k) for every mixture."""
        A = np.asarray(A, dtype=np.complex128)
        W = np.empty_like(A)
        for k in range(problem.K):
            u = np.linalg.solve(problem.Cx_blocks[k], A[k])
            W[k] = u / np.real(np.vdot(A[k], u))
        return cls(A=A, W=W)

    @classmethod
    def from_w(cls, W, problem: JointProblem) -> "JointParams":
        """Couple a^k = Cx w^k / (w^H Cx w^k) for every mixture."""
        W = np.asarray(W, dtype=np.complex128)
        A = np.empty_like(W)
        for k in range(problem.K):
            b = problem.Cx_blocks[k] @ W[k]
            A[k] = b / np.real(np.vdot(W[k], b))
        return cls(A=A, W=W)

    @property
    def K(self) -> int:
        return self.A.shape[0]


@dataclass
class JointSolverTrace:
    """Diagnostics of one joint run; per-mixture arrays have a K axis."""

    grad_norms: np.ndarray            # (n_iter, K)
    n_iter: int
    converged: bool
    failure: str | None = None
    branches: np.ndarray | None = None         # (n_iter, K) of "w"/"a"
    criterion_iters: np.ndarray | None = None
    criterion_values: np.ndarray | None = None  # (n_refresh, K)
    a_iterates: np.ndarray | None = None        # (n_iter, K, d)
    w_iterates: np.ndarray | None = None


def _extract_all(params: JointParams, problem: JointProblem) -> np.ndarray:
    return np.einsum("ki,kin->kn", np.conj(params.W), problem.X_blocks)


def theta(params: JointParams, problem: JointProblem, ell: int,
          k: int) -> np.ndarray:
    """Cross moment theta^{lk} = Z_hat^l (s_hat^k)^H / N.

    Equals B^l Cx^{lk} w^k; computed here from the signals directly.  Under
    the orthogonal coupling, theta^{kk} = 0 up to rounding.
    """
    B_ell = background_basis(params.A[ell])
    s_k = np.conj(params.W[k]) @ problem.X_blocks[k]
    Z = B_ell @ problem.X_blocks[ell]
    return (Z @ np.conj(s_k)) / problem.N


def _stacked_background(params: JointParams,
                        problem: JointProblem) -> np.ndarray:
    """Stack Z_hat^1..Z_hat^K into one (K (d-1), N) array."""
    return np.vstack([background_basis(params.A[k]) @ problem.X_blocks[k]
                      for k in range(params.K)])


def joint_contrast(params: JointParams, problem: JointProblem, R,
                   model) -> float:
    """mean log f - stacked quadratic form + sum_k (d-2) log |gamma^k|^2.

    R weights the stacked background estimate: its (i, j) block of size
    (d-1) x (d-1) multiplies Z_hat^i against Z_hat^j.
    """
    R = np.asarray(R, dtype=np.complex128)
    d = problem.d
    S = _extract_all(params, problem)
    logf = model.log_density(S, pilot=problem.pilot)
    Z = _stacked_background(params, problem)
    quad = float(np.mean(np.real(np.einsum("in,ij,jn->n", np.conj(Z), R, Z))))
    gammas = np.abs(params.A[:, 0]) ** 2
    return (float(np.mean(logf)) - quad
            + (d - 2) * float(np.sum(np.log(gammas))))


def _default_R(params: JointParams, problem: JointProblem) -> np.ndarray:
    Z = _stacked_background(params, problem)
    Cz = Z @ np.conj(Z.T) / problem.N
    Cz = 0.5 * (Cz + np.conj(Cz.T))
    R = np.linalg.inv(Cz)
    return 0.5 * (R + np.conj(R.T))


def grad_ive_w_full(k: int, params: JointParams, problem: JointProblem,
                    R=None, phi=None, model=None) -> np.ndarray:
    """w-gradient of the joint contrast for mixture k with the cross term.

        grad^k = a^k - X^k phi^k{}^T / N
                 + (w^k{}^H Cx^{kk} w^k)^{-1} Cx^{kk} (B^k)^H eps^k,

    where eps^k = sum_l R^{kl} theta^{lk} collects the cross moments
    against the (k, l) blocks of R.  R defaults to the inverse stacked
    background covariance at the current parameters, where this expression
    is the exact gradient; phi defaults to row k of the model's exact
    score.  Orthogonal coupling makes theta^{kk} = 0, and when every
    mixture is coupled the remaining cross moments are small, which is what
    :func:`grad_ive_w` exploits by dropping the correction term.
    """
    if model is None:
        model = ScoreModel("vector-coupled", K=params.K)
    if R is None:
        R = _default_R(params, problem)
    R = np.asarray(R, dtype=np.complex128)
    d = problem.d
    dm1 = d - 1
    if phi is None:
        S = _extract_all(params, problem)
        phi = model.exact_score(S, pilot=problem.pilot)[k]
    phi = np.asarray(phi, dtype=np.complex128).reshape(-1)
    a_k, w_k = params.A[k], params.W[k]
    Cx_kk = problem.Cx_blocks[k]
    eps = np.zeros(dm1, dtype=np.complex128)
    for ell in range(params.K):
        R_kl = R[k * dm1:(k + 1) * dm1, ell * dm1:(ell + 1) * dm1]
        eps += R_kl @ theta(params, problem, ell, k)
    q = float(np.real(np.vdot(w_k, Cx_kk @ w_k)))
    B_k = background_basis(a_k)
    return (a_k - (problem.X_blocks[k] @ phi) / problem.N
            + (Cx_kk @ (np.conj(B_k.T) @ eps)) / q)


def grad_ive_w(k: int, params: JointParams, problem: JointProblem,
               phi_normalized) -> np.ndarray:
    """Collapsed w-gradient a^k - X^k phi^k{}^T / N (phi at unit nu)."""
    phi = np.asarray(phi_normalized, dtype=np.complex128).reshape(-1)
    return params.A[k] - (problem.X_blocks[k] @ phi) / problem.N


def grad_ive_a(k: int, params: JointParams, problem: JointProblem,
               phi_normalized) -> np.ndarray:
    """Collapsed a-gradient w^k - lambda_a^k (Cx^{kk})^{-1} X^k phi^k^T / N."""
    phi = np.asarray(phi_normalized, dtype=np.complex128).reshape(-1)
    a_k = params.A[k]
    u = np.linalg.solve(problem.Cx_blocks[k], a_k)
    lam = 1.0 / float(np.real(np.vdot(a_k, u)))
    v = np.linalg.solve(problem.Cx_blocks[k],
                        (problem.X_blocks[k] @ phi) / problem.N)
    return lam * u - lam * v


def run_joint_batch(X, start, mode, config=None, model=None, pilot=None,
                    record=False, record_iterates=False) -> dict:
    """Advance a batch of joint K-mixture problems in lock step.

    Args:
        X: (B, K, d, N) array of mixtures.
        start: (B, K, d) initial W rows (mode "w") or A rows ("a", "s").
        mode: "w", "a", or "s" (per-mixture criterion switching).
        config: :class:`SolverConfig`; defaults to ``SolverConfig()``.
        model: :class:`ScoreModel` of a vector kind with matching K;
            defaults to ``vector-coupled``.
        pilot: optional (B, N) per-problem pilot rows.
        record / record_iterates: as in :func:`icex.ice.run_batch`.

    Returns:
        dict with "a", "w" (B, K, d), per-problem "iters", "converged",
        "failure", per-mixture "kappa" (B, K), and recorded histories with
        a K axis.  A problem converges when max_k ||delta^k|| < tol and
        freezes as a whole if any of its mixtures degenerates.
    """
    if config is None:
        config = SolverConfig()
    if mode not in ("w", "a", "s"):
        raise ValueError("mode must be 'w', 'a' or 's'")
    X = np.asarray(X, dtype=np.complex128)
    if X.ndim != 4:
        raise ValueError("X must have shape (B, K, d, N)")
    Bn, K, d, N = X.shape
    if model is None:
        model = ScoreModel("vector-coupled", K=K)
    if getattr(model, "K", K) != K:
        raise ValueError("model.K must match the number of mixtures")
    if d < 2 or N < d:
        raise ValueError("need d >= 2 channels and N >= d samples")
    start = np.asarray(start, dtype=np.complex128)
    if start.shape != (Bn, K, d):
        raise ValueError("start must have shape (B, K, d)")
    if pilot is not None:
        pilot = np.asarray(pilot, dtype=np.complex128)
        if pilot.shape != (Bn, N):
            raise ValueError("pilot must have shape (B, N)")
    mu = config.step_mu

    Xf = X.reshape(Bn * K, d, N)
    Cxf = np.matmul(Xf, np.conj(np.swapaxes(Xf, 1, 2))) / N
    Cxf = 0.5 * (Cxf + np.conj(np.swapaxes(Cxf, 1, 2)))

    a = np.zeros((Bn, K, d), dtype=np.complex128)
    w = np.zeros((Bn, K, d), dtype=np.complex128)
    kappa = np.full((Bn, K), np.inf)
    iters = np.zeros(Bn, dtype=np.int64)
    converged = np.zeros(Bn, dtype=bool)
    failure = np.full(Bn, None, dtype=object)
    active = np.ones(Bn, dtype=bool)

    evals = np.linalg.eigvalsh(Cxf)
    bad_k = (~np.isfinite(evals).all(axis=1)
             | (evals[:, -1] <= 0.0)
             | (evals[:, 0] <= 1e-14 * evals[:, -1]))
    bad_cov = bad_k.reshape(Bn, K).any(axis=1)
    if bad_cov.any():
        failure[bad_cov] = "singular-covariance"
        active &= ~bad_cov

    Cx = Cxf.reshape(Bn, K, d, d)
    need_inv = mode in ("a", "s")
    Cxi = None
    if need_inv:
        Cxi = np.zeros_like(Cx)
        if active.any():
            inv = np.linalg.inv(Cx[active].reshape(-1, d, d))
            inv = 0.5 * (inv + np.conj(np.swapaxes(inv, 1, 2)))
            Cxi[active] = inv.reshape(-1, K, d, d)

    if mode == "w":
        w[:] = start
    else:
        a[:] = start
        if mode == "s" and active.any():
            af = a[active].reshape(-1, d)
            u0 = _mv(Cxi[active].reshape(-1, d, d), af)
            t0 = np.real(_vdot_rows(af, u0))
            with np.errstate(all="ignore"):
                w[active] = (u0 / t0[:, None]).reshape(-1, K, d)
            bad0 = ~(np.isfinite(t0) & (t0 > 0.0))
            if bad0.any():
                ids = np.flatnonzero(active)[bad0.reshape(-1, K).any(axis=1)]
                failure[ids] = "degenerate-coupling"
                active[ids] = False

    do_recouple = (mode == "s") or record_iterates

    grad_hist: list[np.ndarray] = []
    branch_hist: list[np.ndarray] = []
    crit_hist: list[tuple[int, np.ndarray]] = []
    a_hist: list[np.ndarray] = []
    w_hist: list[np.ndarray] = []

    live = np.flatnonzero(active)
    Xp = X[live]
    Cxp = Cx[live]
    Cxip = Cxi[live] if need_inv else None
    pilp = pilot[live] if pilot is not None else None
    wp = w[live].copy()
    ap = a[live].copy()
    kp = kappa[live].copy()
    alive = np.ones(live.size, dtype=bool)

    def freeze(rows: np.ndarray, reason: str | None, conv: bool):
        gids = live[rows]
        w[gids] = wp[rows]
        a[gids] = ap[rows]
        kappa[gids] = kp[rows]
        if reason is not None:
            failure[gids] = reason
        converged[gids] = conv
        active[gids] = False
        alive[rows] = False

    for it in range(config.max_iter):
        if not alive.any():
            break
        if alive.sum() < 0.9 * alive.size:
            keep = np.flatnonzero(alive)
            live = live[keep]
            Xp, Cxp = Xp[keep], Cxp[keep]
            if Cxip is not None:
                Cxip = Cxip[keep]
            if pilp is not None:
                pilp = pilp[keep]
            wp, ap, kp = wp[keep], ap[keep], kp[keep]
            alive = np.ones(live.size, dtype=bool)
        m = live.size
        Xv = Xp.reshape(m * K, d, N)
        Cxv = Cxp.reshape(m * K, d, d)
        Cxiv = Cxip.reshape(m * K, d, d) if Cxip is not None else None
        wv = wp.reshape(m * K, d)
        av = ap.reshape(m * K, d)
        alive_k = np.repeat(alive, K)

        if mode == "s" and it % config.Q == 0:
            kv = kp.reshape(-1)
            kv[alive_k] = _switch_batch(av[alive_k], Cxv[alive_k])
            kp = kv.reshape(m, K)
            kappa[live] = kp
            if record:
                crit_hist.append((it, kappa.copy()))

        if mode == "w":
            wsel = np.ones(m * K, dtype=bool)
        elif mode == "a":
            wsel = np.zeros(m * K, dtype=bool)
        else:
            wsel = kp.reshape(-1) < config.tau

        with np.errstate(all="ignore"):
            bad_couple = np.zeros(m * K, dtype=bool)
            wcur = wv
            acur = av
            if mode != "a":
                bvec = _mv(Cxv, wv)
                q = np.real(_vdot_rows(wv, bvec))
                acur_w = bvec / q[:, None]
                bad_couple |= wsel & ~(np.isfinite(q) & (q > 0.0))
            if mode != "w":
                uvec = _mv(Cxiv, av)
                tq = np.real(_vdot_rows(av, uvec))
                lam = 1.0 / tq
                wcur_a = uvec * lam[:, None]
                bad_couple |= ~wsel & ~(np.isfinite(tq) & (tq > 0.0))
            if mode == "w":
                acur = acur_w
            elif mode == "a":
                wcur = wcur_a
            else:
                acur = np.where(wsel[:, None], acur_w, av)
                wcur = np.where(wsel[:, None], wv, wcur_a)

            # barrier: all K signals extracted before any score evaluation
            s = np.matmul(np.conj(wcur)[:, None, :], Xv)[:, 0, :]
            phi = model.phi(s.reshape(m, K, N), pilot=pilp).reshape(m * K, N)
            nu = np.matmul(s[:, None, :], phi[:, :, None])[:, 0, 0] / N
            bad_nu = ~bad_couple & ~(np.isfinite(nu) & (np.abs(nu) > NU_FLOOR))

            xphi = np.matmul(Xv, phi[:, :, None])[:, :, 0] / N
            if mode == "w":
                delta = acur - xphi / nu[:, None]
            elif mode == "a":
                delta = wcur - lam[:, None] * _mv(Cxiv, xphi) / nu[:, None]
            else:
                delta_w = acur - xphi / nu[:, None]
                delta_a = wcur - lam[:, None] * _mv(Cxiv, xphi) / nu[:, None]
                delta = np.where(wsel[:, None], delta_w, delta_a)
            gn = np.linalg.norm(delta, axis=-1)
            bad_gn = (~bad_couple & ~bad_nu
                      & ~(np.isfinite(gn) & (gn < DIVERGENCE_NORM)))

            # one bad mixture freezes its whole joint problem
            trial_bad = (bad_couple | bad_nu | bad_gn).reshape(m, K).any(axis=1)
            upd_k = alive_k & ~np.repeat(trial_bad, K)

            uw = upd_k & wsel
            ua = upd_k & ~wsel
            if uw.any():
                wv[uw] = wcur[uw] + mu * delta[uw]
            if ua.any():
                av[ua] = acur[ua] + mu * delta[ua]

            bad_post = np.zeros(m * K, dtype=bool)
            if do_recouple:
                if uw.any():
                    b2 = _mv(Cxv[uw], wv[uw])
                    q2 = np.real(_vdot_rows(wv[uw], b2))
                    ok2 = np.isfinite(q2) & (q2 > 0.0)
                    rows = np.flatnonzero(uw)
                    av[rows[ok2]] = b2[ok2] / q2[ok2, None]
                    bad_post[rows[~ok2]] = True
                if ua.any():
                    u2 = _mv(Cxiv[ua], av[ua])
                    t2 = np.real(_vdot_rows(av[ua], u2))
                    ok2 = np.isfinite(t2) & (t2 > 0.0)
                    rows = np.flatnonzero(ua)
                    wv[rows[ok2]] = u2[ok2] / t2[ok2, None]
                    bad_post[rows[~ok2]] = True

        wp = wv.reshape(m, K, d)
        ap = av.reshape(m, K, d)
        upd_t = upd_k.reshape(m, K).all(axis=1) & alive
        iters[live[upd_t]] += 1
        if record:
            gn_row = np.full((Bn, K), np.nan)
            gn_row[live[upd_t]] = gn.reshape(m, K)[upd_t]
            grad_hist.append(gn_row)
            br_row = np.full((Bn, K), "-", dtype="<U1")
            br_row[live[upd_t]] = np.where(wsel.reshape(m, K)[upd_t], "w", "a")
            branch_hist.append(br_row)
        if record_iterates:
            a_snap = np.full((Bn, K, d), np.nan, dtype=np.complex128)
            w_snap = np.full((Bn, K, d), np.nan, dtype=np.complex128)
            a_snap[live[upd_t]] = ap[upd_t]
            w_snap[live[upd_t]] = wp[upd_t]
            a_hist.append(a_snap)
            w_hist.append(w_snap)

        for reason, mask_k in (("degenerate-coupling", bad_couple),
                               ("degenerate-score", bad_nu),
                               ("diverged", bad_gn),
                               ("degenerate-coupling", bad_post)):
            mask_t = alive & mask_k.reshape(m, K).any(axis=1)
            rows = np.flatnonzero(mask_t)
            if rows.size:
                freeze(rows, reason, conv=False)
        done_t = (upd_t & ~bad_post.reshape(m, K).any(axis=1)
                  & (gn.reshape(m, K).max(axis=1) < config.tol))
        rows = np.flatnonzero(done_t)
        if rows.size:
            freeze(rows, None, conv=True)

    still = np.flatnonzero(alive)
    if still.size:
        freeze(still, None, conv=False)

    with np.errstate(all="ignore"):
        if mode == "w":
            wf = w.reshape(-1, d)
            bv = _mv(Cxf, wf)
            qv = np.real(_vdot_rows(wf, bv))
            ok = np.isfinite(qv) & (qv > 0.0)
            af = a.reshape(-1, d)
            af[ok] = bv[ok] / qv[ok, None]
            a = af.reshape(Bn, K, d)
        elif mode == "a":
            af = a.reshape(-1, d)
            uv = _mv(Cxi.reshape(-1, d, d), af)
            tv = np.real(_vdot_rows(af, uv))
            ok = np.isfinite(tv) & (tv > 0.0)
            wf = w.reshape(-1, d)
            wf[ok] = uv[ok] / tv[ok, None]
            w = wf.reshape(Bn, K, d)

    out = {"a": a, "w": w, "iters": iters, "converged": converged,
           "failure": failure, "kappa": kappa}
    if record:
        out["grad_norms"] = (np.array(grad_hist) if grad_hist
                             else np.zeros((0, Bn, K)))
        out["branches"] = (np.array(branch_hist) if branch_hist
                           else np.zeros((0, Bn, K), dtype="<U1"))
        out["criterion"] = crit_hist
    if record_iterates:
        out["a_iterates"] = (np.array(a_hist) if a_hist
                             else np.zeros((0, Bn, K, d), dtype=np.complex128))
        out["w_iterates"] = (np.array(w_hist) if w_hist
                             else np.zeros((0, Bn, K, d), dtype=np.complex128))
    return out


def _default_model(problem: JointProblem, model):
    if model is not None:
        return model
    if problem.pilot is not None:
        return ScoreModel("piloted-vector", K=problem.K, pilot=problem.pilot)
    return ScoreModel("vector-coupled", K=problem.K)


def _run_joint_serial(problem: JointProblem, start, mode, config, model):
    if config is None:
        config = SolverConfig()
    model = _default_model(problem, model)
    start = np.asarray(start, dtype=np.complex128).reshape(problem.K,
                                                           problem.d)
    pilot = None
    if problem.pilot is not None:
        pilot = problem.pilot[None, :]
    out = run_joint_batch(problem.X_blocks[None], start[None], mode,
                          config=config, model=model, pilot=pilot,
                          record=True, record_iterates=config.keep_iterates)
    n_iter = int(out["iters"][0])
    trace = JointSolverTrace(
        grad_norms=out["grad_norms"][:n_iter, 0, :].copy(),
        n_iter=n_iter,
        converged=bool(out["converged"][0]),
        failure=out["failure"][0],
    )
    if mode == "s":
        trace.branches = out["branches"][:n_iter, 0, :].copy()
        crit = [(it, val[0]) for it, val in out["criterion"]]
        trace.criterion_iters = np.array([c[0] for c in crit], dtype=np.int64)
        trace.criterion_values = (np.array([c[1] for c in crit])
                                  if crit else np.zeros((0, problem.K)))
    if config.keep_iterates:
        trace.a_iterates = out["a_iterates"][:n_iter, 0].copy()
        trace.w_iterates = out["w_iterates"][:n_iter, 0].copy()
    if trace.failure in _RAISING_FAILURES:
        raise SolverError(f"iteration stopped: {trace.failure}", trace)
    params = None
    try:
        params = JointParams(A=out["a"][0], W=out["w"][0])
    except ValueError:
        params = JointParams.__new__(JointParams)
        params.A, params.W = out["a"][0], out["w"][0]
    return params, trace


def ogive_w(problem: JointProblem, W_ini, config=None, model=None):
    """Joint gradient ascent in all w^k with per-mixture re-coupling.

    Per iteration: couple a^k and extract s_hat^k for every k, then score
    all K signals jointly and step every w^k by mu (a^k - X^k phi^k^T / N)
    with phi^k rescaled to unit nu^k.  Stops once max_k ||delta^k|| < tol.

    Returns:
        (params, trace) with params holding the final (A, W) rows.  The
        default model couples the signals through a vector score (piloted
        when the problem carries a pilot).
    """
    return _run_joint_serial(problem, W_ini, "w", config, model)


def ogive_a(problem: JointProblem, A_ini, config=None, model=None):
    """Joint gradient ascent in all a^k, the mixing-vector mirror of
    :func:`ogive_w`.  Returns (params, trace)."""
    return _run_joint_serial(problem, A_ini, "a", config, model)


def ogive_s(problem: JointProblem, A_ini, config=None, model=None):
    """Criterion-switched joint solver with a per-mixture branch choice.

    Every Q iterations the switching criterion is re-evaluated for every
    mixture at its current a^k; mixtures below tau run the w-branch,
    the others the a-branch, synchronously within each iteration.
    Returns (params, trace).
    """
    return _run_joint_serial(problem, A_ini, "s", config, model)
