r"""Orthogonally constrained gradient solvers for one-signal extraction.

The data model is x(n) = a s(n) + y(n): one target signal s with mixing
vector a plus a background y that the basis B = [g, -gamma I] annihilates
(B a = 0, with a = [gamma; g]). De-mixing uses w with w^H a = 1, and the
sample covariance Cx ties the two parameterizations together:

    a = Cx w / (w^H Cx w),        w = Cx^{-1} a / (a^H Cx^{-1} a).

Keeping the pair coupled this way makes the extracted signal s_hat = w^H X
empirically uncorrelated with the background estimate Z = B X (the
orthogonal constraint), so only one side has to be adapted.

The contrast being climbed, for a Hermitian weighting R, is

    C(w) = mean log f(w^H x) - mean x^H B^H R B x + (d - 2) log |gamma|^2.

At R = Cz^{-1} with Cz = B Cx B^H, the gradient with respect to conj(w)
collapses (for any score phi rescaled so that s_hat phi^T / N = 1) to

    grad = a - X phi(s_hat)^T / N,

and the a-side counterpart, with lambda_a = (a^H Cx^{-1} a)^{-1}, is

    grad = w - lambda_a Cx^{-1} X phi(s_hat)^T / N.

:func:`grad_w_full` keeps all five terms of the w-gradient for a caller
supplied R so that the collapsed forms can be checked against it.

Solvers (each returns ``(a, w, SolverTrace)``):

* :func:`ogice_w` - ascent in w, a re-coupled every iteration.
* :func:`ogice_a` - ascent in a, w re-coupled every iteration.
* :func:`ogice_s` - switches between the two branches every iteration based
  on :func:`switching_criterion` (small values mean the steered signal
  dominates the mixture, which favours the w parameterization).

All three wrap :func:`run_batch`, which advances many independent problems
in lock step and freezes each as it converges or fails, so single-problem
and batched runs produce identical iterate sequences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import sample_covariance
from .mixing import (
    DegenerateParameterError,
    DegenerateSignalError,
    background_basis,
    couple_a_from_w,
)
from .scores import NU_FLOOR, ScoreModel

__all__ = [
    "SolverConfig",
    "SolverTrace",
    "SolverError",
    "contrast",
    "grad_w_full",
    "grad_w",
    "grad_a",
    "preconditioned_step",
    "switching_criterion",
    "run_batch",
    "ogice_w",
    "ogice_a",
    "ogice_s",
]

# |a_p| below this fraction of max_i |a_i| re-pivots the switching criterion
# onto the largest-modulus entry.
PIVOT_FLOOR = 1e-12

# A gradient this large (or non-finite) freezes the problem as diverged
# before the step, keeping the returned iterate finite.
DIVERGENCE_NORM = 1e12

PRECONDITIONERS = ("none", "demix", "whiten")

# Failure reasons that make an iteration impossible to continue; the serial
# wrappers raise SolverError for these.  "diverged" is a flagged
# non-convergence instead and still returns the last iterate.
_RAISING_FAILURES = ("degenerate-score", "singular-covariance",
                     "degenerate-coupling")


class SolverError(RuntimeError):
    """An iteration could not proceed; carries the trace recorded so far."""

    def __init__(self, message: str, trace: "SolverTrace | None" = None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class SolverConfig:
    """Step size, stopping rule and branching settings shared by the solvers.

    Attributes:
        step_mu: gradient step size mu.
        tol: stop once the Euclidean norm of the update direction drops
            below this value.
        max_iter: iteration cap; reaching it returns the last iterate with
            ``converged=False`` instead of raising.
        Q: the switching solver re-evaluates its criterion every Q
            iterations and keeps the branch fixed in between.
        tau: switching threshold; criterion < tau selects the w-branch.
        precondition: "none", "whiten" (step through Cx^{-1}) or "demix"
            (step through W^H W with W the current de-mixing matrix).
            Honoured by :func:`ogice_w` only.
        keep_iterates: record per-iteration (a, w) snapshots in the trace.
    """

    step_mu: float = 0.1
    tol: float = 1e-3
    max_iter: int = 5000
    Q: int = 10
    tau: float = 0.1
    precondition: str = "none"
    keep_iterates: bool = False

    def __post_init__(self):
        if self.step_mu <= 0.0 or self.tol <= 0.0:
            raise ValueError("step_mu and tol must be positive")
        if self.max_iter < 1 or self.Q < 1:
            raise ValueError("max_iter and Q must be at least 1")
        if self.tau < 0.0:
            raise ValueError("tau must be non-negative")
        if self.precondition not in PRECONDITIONERS:
            raise ValueError(f"precondition must be one of {PRECONDITIONERS}")


@dataclass
class SolverTrace:
    """Per-run diagnostics.  Arrays are indexed by iteration.

    Attributes:
        grad_norms: ||delta|| for every completed iteration.
        n_iter: number of completed iterations.
        converged: True when the stopping rule fired before max_iter.
        failure: None, or why the run froze early ("degenerate-score",
            "singular-covariance", "degenerate-coupling", "diverged").
        branches: for the switching solver, one character per iteration
            ("w" or "a"); None otherwise.
        criterion_iters / criterion_values: switching-criterion samples
            (evaluated every Q iterations); None for the fixed solvers.
        a_iterates / w_iterates: (n_iter, d) snapshots after each
            iteration, recorded when ``keep_iterates`` is set.
    """

    grad_norms: np.ndarray
    n_iter: int
    converged: bool
    failure: str | None = None
    branches: str | None = None
    criterion_iters: np.ndarray | None = None
    criterion_values: np.ndarray | None = None
    a_iterates: np.ndarray | None = None
    w_iterates: np.ndarray | None = None


def contrast(params, X, R, model) -> float:
    """Empirical contrast of an (a, w) pair for a fixed weighting R.

    Returns mean log f(w^H x) - mean x^H B^H R B x + (d-2) log |gamma|^2,
    with log f taken from ``model.log_density``.
    """
    X = np.asarray(X, dtype=np.complex128)
    a = np.asarray(params.a, dtype=np.complex128).reshape(-1)
    w = np.asarray(params.w, dtype=np.complex128).reshape(-1)
    d = a.size
    s = np.conj(w) @ X
    if getattr(model, "is_vector", False):
        logf = model.log_density(s[None, :])
    else:
        logf = model.log_density(s)
    Z = background_basis(a) @ X
    quad = float(np.mean(np.real(np.einsum("in,ij,jn->n", np.conj(Z), R, Z))))
    return float(np.mean(logf)) - quad + (d - 2) * float(np.log(np.abs(a[0]) ** 2))


def _exact_score(model, s: np.ndarray) -> np.ndarray:
    if getattr(model, "is_vector", False):
        return model.exact_score(s[None, :])[0]
    return model.exact_score(s)


def grad_w_full(w, X, R, model, phi=None) -> np.ndarray:
    """Gradient of the contrast with respect to conj(w), all terms kept.

    With a coupled from w, gamma = a_1, h = (w_2..w_d), e1 the first unit
    vector, E = [0 I_{d-1}] and Cz = B Cx B^H:

        grad = -X phi^T / N + 2 tr(R Cz) a
               - (w^H Cx w)^{-1} (Cx E^H R Cz h - tr(R B Cx E^H) Cx e1)
               - 2 (d - 2) a + (d - 2) conj(gamma)^{-1} (w^H Cx w)^{-1} Cx e1.

    phi defaults to the exact score of the model's integrable density; any
    score may be substituted, since the remaining terms do not involve it.
    At R = Cz^{-1} the non-score terms telescope and the whole expression
    equals :func:`grad_w` with a unit-nu score.
    """
    w = np.asarray(w, dtype=np.complex128).reshape(-1)
    X = np.asarray(X, dtype=np.complex128)
    R = np.asarray(R, dtype=np.complex128)
    d, N = X.shape
    Cx = sample_covariance(X)
    a = couple_a_from_w(w, Cx)
    gamma = a[0]
    Bm = background_basis(a)
    h = w[1:]
    s = np.conj(w) @ X
    if phi is None:
        phi = _exact_score(model, s)
    phi = np.asarray(phi, dtype=np.complex128).reshape(-1)
    q = float(np.real(np.vdot(w, Cx @ w)))
    Cz = Bm @ Cx @ np.conj(Bm.T)
    Cx_cols = Cx[:, 1:]          # Cx E^H
    Cx_e1 = Cx[:, 0]
    term_score = -(X @ phi) / N
    term_trace = 2.0 * np.trace(R @ Cz) * a
    term_cross = -(Cx_cols @ (R @ (Cz @ h))
                   - np.trace(R @ (Bm @ Cx_cols)) * Cx_e1) / q
    term_dim = -2.0 * (d - 2) * a
    term_gamma = (d - 2) / np.conj(gamma) * Cx_e1 / q
    return term_score + term_trace + term_cross + term_dim + term_gamma


def grad_w(w, a, X, phi_normalized) -> np.ndarray:
    """Collapsed w-gradient a - X phi^T / N (phi pre-scaled to unit nu)."""
    a = np.asarray(a, dtype=np.complex128).reshape(-1)
    X = np.asarray(X, dtype=np.complex128)
    phi = np.asarray(phi_normalized, dtype=np.complex128).reshape(-1)
    return a - (X @ phi) / X.shape[1]


def grad_a(a, X, phi_normalized, Cx_inv) -> np.ndarray:
    """Collapsed a-gradient w - lambda_a Cx^{-1} X phi^T / N.

    w and lambda_a = (a^H Cx^{-1} a)^{-1} are computed from the supplied
    inverse covariance; phi must be pre-scaled to unit nu.
    """
    a = np.asarray(a, dtype=np.complex128).reshape(-1)
    X = np.asarray(X, dtype=np.complex128)
    Cx_inv = np.asarray(Cx_inv, dtype=np.complex128)
    phi = np.asarray(phi_normalized, dtype=np.complex128).reshape(-1)
    u = Cx_inv @ a
    t = float(np.real(np.vdot(a, u)))
    if not np.isfinite(t) or t <= 0.0:
        raise DegenerateSignalError("a^H Cx^{-1} a must be positive")
    lam = 1.0 / t
    w = lam * u
    return w - lam * (Cx_inv @ (X @ phi)) / X.shape[1]


def preconditioned_step(w, delta, D, mu) -> np.ndarray:
    """One step w + mu D^H D delta.

    Equivalent to a plain gradient step in the coordinates u = D^{-H} w of
    the transformed data D X, mapped back to w-coordinates.
    """
    w = np.asarray(w, dtype=np.complex128).reshape(-1)
    delta = np.asarray(delta, dtype=np.complex128).reshape(-1)
    D = np.asarray(D, dtype=np.complex128)
    return w + mu * (np.conj(D.T) @ (D @ delta))


def switching_criterion(a, Cx) -> float:
    """Scale-invariant measure of how weakly the steered signal dominates.

    With b = Cx a, lambda_b = b_p / a_p and pivot p (the first entry unless
    |a_1| is negligible relative to max_i |a_i|, then the largest entry):

        ||a / a_p - b / b_p|| * ||Cx - lambda_b b b^H / ||b||^2||_F / ||Cx||_F

    If a is (close to) the mixing vector of a strong signal, b is nearly
    collinear with a and the rank-one term captures most of Cx, so both
    factors are small.  Small values therefore favour the w-parameterized
    branch; weak or misaligned signals produce large values and favour the
    a-branch.
    """
    a = np.asarray(a, dtype=np.complex128).reshape(-1)
    Cx = np.asarray(Cx, dtype=np.complex128)
    if not np.any(np.abs(a) > 0.0):
        raise DegenerateParameterError("switching criterion needs a nonzero a")
    value = _switch_batch(a[None, :], Cx[None, :, :])[0]
    return float(value)


def _switch_batch(a: np.ndarray, Cx: np.ndarray) -> np.ndarray:
    """Vectorized switching criterion over a batch (returns inf when b_p = 0)."""
    m, d = a.shape
    absa = np.abs(a)
    amax = absa.max(axis=1)
    piv = np.where(absa[:, 0] >= PIVOT_FLOOR * amax, 0, np.argmax(absa, axis=1))
    ap = np.take_along_axis(a, piv[:, None], axis=1)[:, 0]
    b = np.matmul(Cx, a[:, :, None])[:, :, 0]
    bp = np.take_along_axis(b, piv[:, None], axis=1)[:, 0]
    out = np.full(m, np.inf)
    with np.errstate(all="ignore"):
        first = np.linalg.norm(a / ap[:, None] - b / bp[:, None], axis=1)
        lam_b = bp / ap
        nb2 = np.sum(np.abs(b) ** 2, axis=1)
        outer = b[:, :, None] * np.conj(b[:, None, :])
        M = Cx - (lam_b / nb2)[:, None, None] * outer
        second = (np.linalg.norm(M, axis=(1, 2))
                  / np.linalg.norm(Cx, axis=(1, 2)))
        val = first * second
    ok = (np.abs(ap) > 0.0) & (np.abs(bp) > 0.0) & np.isfinite(val)
    out[ok] = val[ok]
    return out


def _mv(A: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Batched matrix-vector product (m,d,d) x (m,d) -> (m,d)."""
    return np.matmul(A, v[:, :, None])[:, :, 0]


def _vdot_rows(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Row-wise u^H v for (m,d) stacks."""
    return np.einsum("bi,bi->b", np.conj(u), v)


def _phi_rows(model, s: np.ndarray, pilot) -> np.ndarray:
    """Score of (m, N) extracted rows, one independent problem per row."""
    if getattr(model, "is_vector", False):
        return model.phi(s[:, None, :], pilot=pilot)[:, 0, :]
    # scalar kinds reject a pilot; let the model enforce that
    return model.phi(s, pilot=pilot)


def _demix_batch(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Stack the de-mixing matrices [[w^H], [B(a)]] for (m,d) pairs."""
    m, d = a.shape
    Wm = np.zeros((m, d, d), dtype=np.complex128)
    Wm[:, 0, :] = np.conj(w)
    Wm[:, 1:, 0] = a[:, 1:]
    diag = np.arange(1, d)
    Wm[:, diag, diag] = -a[:, 0][:, None]
    return Wm


def run_batch(X, start, mode, config=None, model=None, pilot=None,
              record=False, record_iterates=False) -> dict:
    """Advance a batch of independent extraction problems in lock step.

    Args:
        X: (B, d, N) array, one mixture per leading index.
        start: (B, d) initial w (mode "w") or initial a (modes "a", "s").
        mode: "w", "a", or "s" for the criterion-switched solver.
        config: :class:`SolverConfig`; defaults to ``SolverConfig()``.
        model: :class:`ScoreModel`; defaults to ``tanh-conjugate``.
        pilot: optional (B, N) per-problem pilot rows for piloted kinds.
        record: keep per-iteration gradient norms, branch letters and
            switching-criterion samples.
        record_iterates: additionally keep per-iteration (a, w) snapshots.

    Returns:
        dict with final "a" and "w" (B, d), "iters", "converged",
        "failure" (object array of None or a reason string) and "kappa"
        per problem; when recording also "grad_norms" (T, B) with NaN on
        frozen rows, "branches" (T, B), "criterion" as a list of
        (iteration, values) pairs, and "a_iterates"/"w_iterates" (T, B, d).

    Problems freeze as they converge or fail while the others continue, so
    every problem's iterate sequence is identical to a one-problem run.
    """
    if config is None:
        config = SolverConfig()
    if model is None:
        model = ScoreModel("tanh-conjugate")
    if mode not in ("w", "a", "s"):
        raise ValueError("mode must be 'w', 'a' or 's'")
    X = np.asarray(X, dtype=np.complex128)
    if X.ndim != 3:
        raise ValueError("X must have shape (B, d, N)")
    Bn, d, N = X.shape
    if d < 2 or N < d:
        raise ValueError("need d >= 2 channels and N >= d samples")
    start = np.asarray(start, dtype=np.complex128)
    if start.shape != (Bn, d):
        raise ValueError("start must have shape (B, d)")
    if pilot is not None:
        pilot = np.asarray(pilot, dtype=np.complex128)
        if pilot.shape != (Bn, N):
            raise ValueError("pilot must have shape (B, N)")
    mu = config.step_mu

    Cx = np.matmul(X, np.conj(np.swapaxes(X, 1, 2))) / N
    Cx = 0.5 * (Cx + np.conj(np.swapaxes(Cx, 1, 2)))

    # global result state
    a = np.zeros((Bn, d), dtype=np.complex128)
    w = np.zeros((Bn, d), dtype=np.complex128)
    kappa = np.full(Bn, np.inf)
    iters = np.zeros(Bn, dtype=np.int64)
    converged = np.zeros(Bn, dtype=bool)
    failure = np.full(Bn, None, dtype=object)
    active = np.ones(Bn, dtype=bool)

    evals = np.linalg.eigvalsh(Cx)
    bad_cov = (~np.isfinite(evals).all(axis=1)
               | (evals[:, -1] <= 0.0)
               | (evals[:, 0] <= 1e-14 * evals[:, -1]))
    if bad_cov.any():
        failure[bad_cov] = "singular-covariance"
        active &= ~bad_cov

    need_inv = mode in ("a", "s") or config.precondition == "whiten"
    Cxi = None
    if need_inv:
        Cxi = np.zeros_like(Cx)
        if active.any():
            inv = np.linalg.inv(Cx[active])
            Cxi[active] = 0.5 * (inv + np.conj(np.swapaxes(inv, 1, 2)))

    if mode == "w":
        w[:] = start
    else:
        a[:] = start
        if mode == "s" and active.any():
            u0 = _mv(Cxi[active], a[active])
            t0 = np.real(_vdot_rows(a[active], u0))
            with np.errstate(all="ignore"):
                w[active] = u0 / t0[:, None]
            bad0 = ~(np.isfinite(t0) & (t0 > 0.0))
            if bad0.any():
                ids = np.flatnonzero(active)[bad0]
                failure[ids] = "degenerate-coupling"
                active[ids] = False

    # recouple the complementary parameter inside the loop only when needed
    do_recouple = (mode == "s") or record_iterates

    grad_hist: list[np.ndarray] = []
    branch_hist: list[np.ndarray] = []
    crit_hist: list[tuple[int, np.ndarray]] = []
    a_hist: list[np.ndarray] = []
    w_hist: list[np.ndarray] = []

    # packed working set over the live problems; repacked as rows freeze so
    # the sample-length products never run over frozen problems for long
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

        if mode == "s" and it % config.Q == 0:
            kp[alive] = _switch_batch(ap[alive], Cxp[alive])
            kappa[live] = kp
            if record:
                crit_hist.append((it, kappa.copy()))

        if mode == "w":
            wsel = np.ones(m, dtype=bool)
        elif mode == "a":
            wsel = np.zeros(m, dtype=bool)
        else:
            wsel = kp < config.tau

        with np.errstate(all="ignore"):
            # couplings for both parameterizations (each cheap, d x d work)
            bad_couple = np.zeros(m, dtype=bool)
            wcur = wp
            acur = ap
            if mode != "a":
                bvec = _mv(Cxp, wp)
                q = np.real(_vdot_rows(wp, bvec))
                acur_w = bvec / q[:, None]
                bad_couple |= wsel & ~(np.isfinite(q) & (q > 0.0))
            if mode != "w":
                uvec = _mv(Cxip, ap)
                tq = np.real(_vdot_rows(ap, uvec))
                lam = 1.0 / tq
                wcur_a = uvec * lam[:, None]
                bad_couple |= ~wsel & ~(np.isfinite(tq) & (tq > 0.0))
            if mode == "w":
                acur = acur_w
            elif mode == "a":
                wcur = wcur_a
            else:
                acur = np.where(wsel[:, None], acur_w, ap)
                wcur = np.where(wsel[:, None], wp, wcur_a)

            s = np.matmul(np.conj(wcur)[:, None, :], Xp)[:, 0, :]
            phi = _phi_rows(model, s, pilp)
            nu = np.matmul(s[:, None, :], phi[:, :, None])[:, 0, 0] / N
            bad_nu = ~bad_couple & ~(np.isfinite(nu) & (np.abs(nu) > NU_FLOOR))

            xphi = np.matmul(Xp, phi[:, :, None])[:, :, 0] / N
            if mode == "w":
                delta = acur - xphi / nu[:, None]
            elif mode == "a":
                delta = wcur - lam[:, None] * _mv(Cxip, xphi) / nu[:, None]
            else:
                delta_w = acur - xphi / nu[:, None]
                delta_a = wcur - lam[:, None] * _mv(Cxip, xphi) / nu[:, None]
                delta = np.where(wsel[:, None], delta_w, delta_a)
            gn = np.linalg.norm(delta, axis=-1)
            bad_gn = (~bad_couple & ~bad_nu
                      & ~(np.isfinite(gn) & (gn < DIVERGENCE_NORM)))

            upd = alive & ~(bad_couple | bad_nu | bad_gn)

            uw = upd & wsel
            ua = upd & ~wsel
            if uw.any():
                step = delta
                if mode == "w" and config.precondition == "whiten":
                    step = _mv(Cxip, delta)
                elif mode == "w" and config.precondition == "demix":
                    Wm = _demix_batch(acur, wcur)
                    tmp = _mv(Wm, delta)
                    step = np.matmul(np.conj(np.swapaxes(Wm, 1, 2)),
                                     tmp[:, :, None])[:, :, 0]
                wp[uw] = wcur[uw] + mu * step[uw]
            if ua.any():
                ap[ua] = acur[ua] + mu * delta[ua]

            bad_post = np.zeros(m, dtype=bool)
            if do_recouple:
                if uw.any():
                    b2 = _mv(Cxp[uw], wp[uw])
                    q2 = np.real(_vdot_rows(wp[uw], b2))
                    ok2 = np.isfinite(q2) & (q2 > 0.0)
                    rows = np.flatnonzero(uw)
                    ap[rows[ok2]] = b2[ok2] / q2[ok2, None]
                    bad_post[rows[~ok2]] = True
                if ua.any():
                    u2 = _mv(Cxip[ua], ap[ua])
                    t2 = np.real(_vdot_rows(ap[ua], u2))
                    ok2 = np.isfinite(t2) & (t2 > 0.0)
                    rows = np.flatnonzero(ua)
                    wp[rows[ok2]] = u2[ok2] / t2[ok2, None]
                    bad_post[rows[~ok2]] = True

        iters[live[upd]] += 1
        if record:
            gn_row = np.full(Bn, np.nan)
            gn_row[live[upd]] = gn[upd]
            grad_hist.append(gn_row)
            br_row = np.full(Bn, "-", dtype="<U1")
            br_row[live[uw]] = "w"
            br_row[live[ua]] = "a"
            branch_hist.append(br_row)
        if record_iterates:
            a_snap = np.full((Bn, d), np.nan, dtype=np.complex128)
            w_snap = np.full((Bn, d), np.nan, dtype=np.complex128)
            a_snap[live[upd]] = ap[upd]
            w_snap[live[upd]] = wp[upd]
            a_hist.append(a_snap)
            w_hist.append(w_snap)

        for reason, mask in (("degenerate-coupling", alive & bad_couple),
                             ("degenerate-score", alive & bad_nu),
                             ("diverged", alive & bad_gn),
                             ("degenerate-coupling", bad_post)):
            rows = np.flatnonzero(mask)
            if rows.size:
                freeze(rows, reason, conv=False)
        done = np.flatnonzero(upd & ~bad_post & (gn < config.tol))
        if done.size:
            freeze(done, None, conv=True)

    still = np.flatnonzero(alive)
    if still.size:
        freeze(still, None, conv=False)

    # make the returned pairs coupled for every problem where that is possible
    with np.errstate(all="ignore"):
        if mode == "w":
            bv = _mv(Cx, w)
            qv = np.real(_vdot_rows(w, bv))
            ok = np.isfinite(qv) & (qv > 0.0)
            a[ok] = bv[ok] / qv[ok, None]
        elif mode == "a":
            uv = _mv(Cxi, a)
            tv = np.real(_vdot_rows(a, uv))
            ok = np.isfinite(tv) & (tv > 0.0)
            w[ok] = uv[ok] / tv[ok, None]

    out = {"a": a, "w": w, "iters": iters, "converged": converged,
           "failure": failure, "kappa": kappa}
    if record:
        out["grad_norms"] = (np.array(grad_hist) if grad_hist
                             else np.zeros((0, Bn)))
        out["branches"] = (np.array(branch_hist) if branch_hist
                           else np.zeros((0, Bn), dtype="<U1"))
        out["criterion"] = crit_hist
    if record_iterates:
        out["a_iterates"] = (np.array(a_hist) if a_hist
                             else np.zeros((0, Bn, d), dtype=np.complex128))
        out["w_iterates"] = (np.array(w_hist) if w_hist
                             else np.zeros((0, Bn, d), dtype=np.complex128))
    return out


def _run_serial(X, start, mode, config, model):
    X = np.asarray(X, dtype=np.complex128)
    if X.ndim != 2:
        raise ValueError("X must have shape (d, N)")
    if config is None:
        config = SolverConfig()
    start = np.asarray(start, dtype=np.complex128).reshape(-1)
    out = run_batch(X[None, :, :], start[None, :], mode, config=config,
                    model=model, record=True,
                    record_iterates=config.keep_iterates)
    n_iter = int(out["iters"][0])
    trace = SolverTrace(
        grad_norms=out["grad_norms"][:n_iter, 0].copy(),
        n_iter=n_iter,
        converged=bool(out["converged"][0]),
        failure=out["failure"][0],
    )
    if mode == "s":
        trace.branches = "".join(out["branches"][:n_iter, 0])
        crit = [(it, val[0]) for it, val in out["criterion"]]
        trace.criterion_iters = np.array([c[0] for c in crit], dtype=np.int64)
        trace.criterion_values = np.array([c[1] for c in crit])
    if config.keep_iterates:
        trace.a_iterates = out["a_iterates"][:n_iter, 0, :].copy()
        trace.w_iterates = out["w_iterates"][:n_iter, 0, :].copy()
    if trace.failure in _RAISING_FAILURES:
        raise SolverError(f"iteration stopped: {trace.failure}", trace)
    return out["a"][0], out["w"][0], trace


def ogice_w(X, w_ini, config=None, model=None):
    """Gradient ascent in w with a re-coupled from w every iteration.

    Each iteration extracts s_hat = w^H X, rescales the score to unit nu,
    steps w by mu (a - X phi^T / N) (optionally through the configured
    preconditioner) and stops once the step norm falls below tol.

    Returns:
        (a, w, trace).  Hitting max_iter returns the last iterate with
        ``trace.converged`` False; a degenerate score or covariance raises
        :class:`SolverError` with the partial trace attached.
    """
    return _run_serial(X, w_ini, "w", config, model)


def ogice_a(X, a_ini, config=None, model=None):
    """Gradient ascent in a, the mixing-vector mirror of :func:`ogice_w`.

    Iterates w = coupled MPDR weights, then steps a by
    mu (w - lambda_a Cx^{-1} X phi^T / N).  Returns (a, w, trace) with the
    same convergence and error conventions as :func:`ogice_w`.
    """
    return _run_serial(X, a_ini, "a", config, model)


def ogice_s(X, a_ini, config=None, model=None):
    """Criterion-switched solver: per-iteration choice of w- or a-branch.

    Every Q iterations :func:`switching_criterion` is re-evaluated at the
    current a; values below tau select the w-branch (strong steered signal),
    larger values the a-branch.  Both parameters are re-coupled after every
    step so the branches can hand over at any iteration.  With tau = 0 the
    trajectory reduces to :func:`ogice_a`; with tau = +inf it reduces to
    :func:`ogice_w` started from the coupled w.  Returns (a, w, trace).
    """
    return _run_serial(X, a_ini, "s", config, model)
