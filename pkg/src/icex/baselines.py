r"""Fixed-point one-unit extraction and full-ICA gradient baselines.

The one-unit fixed point (:func:`fica_one_unit`) adapts a single w with the
rational nonlinearity psi(xi) = conj(xi) / (1 + |xi|^2):

    w <- (rho w - Cx^{-1} X psi^T / N) / (rho - nu),   then
    w <- w / sqrt(w^H Cx w),

with nu = mean(s_hat psi) and rho = mean(1 / (1 + |s_hat|^2)^2), both real
for this nonlinearity.  The same iteration can be written as a gradient
step a - X psi^T / (N nu) preconditioned by Cx^{-1}, taken with the
adaptive step mu = nu / (rho - nu) and renormalized
(:func:`fica_via_gradient`); the two produce identical iterates.

The full-ICA baselines adapt a complete d x d de-mixing matrix W:

* :func:`bs_delta`    -  dW^H = W^{-1} - X phi(W X)^T / N
* :func:`ng_delta`    -  dW^H = W^H (I - W X phi(W X)^T / N)
* ``scng``            -  the ng step followed by rescaling every row of W
  to unit output variance.

Row i of W then plays the role of w^H for the i-th output, so the first
row tracks whichever signal it was initialized on.  :func:`ica_batch` and
:func:`fica_batch` advance many problems in lock step with the same
freeze-on-convergence contract as :func:`icex.ice.run_batch`.
"""

from __future__ import annotations

import numpy as np

from .ice import DIVERGENCE_NORM, SolverError, SolverTrace, grad_w, \
    preconditioned_step
from .linalg import inv_sqrt, sample_covariance
from .mixing import couple_a_from_w
from .scores import ScoreModel, score_rational

__all__ = [
    "fica_one_unit",
    "fica_via_gradient",
    "fica_batch",
    "bs_delta",
    "ng_delta",
    "full_ica",
    "ica_batch",
]

# |rho - nu| below this makes the fixed-point division meaningless
BREAKDOWN_FLOOR = 1e-12

ICA_METHODS = ("bs", "ng", "scng")


def fica_batch(X, start, tol=1e-6, max_iter=1000, record=False,
               record_iterates=False) -> dict:
    """Advance a batch of one-unit fixed-point problems in lock step.

    Args:
        X: (B, d, N) mixtures.
        start: (B, d) initial w rows (any scale; normalized on entry).
        tol: stop once |1 - |w_new^H Cx w_old|| < tol (both normalized).
        max_iter: iteration cap.
        record: keep the per-iteration convergence measure.
        record_iterates: keep per-iteration normalized w snapshots.

    Returns:
        dict with final coupled "a" and normalized "w" (B, d), "iters",
        "converged", "failure" (None, "singular-covariance" or
        "fixed-point-breakdown"), and optional histories.
    """
    X = np.asarray(X, dtype=np.complex128)
    Bn, d, N = X.shape
    start = np.asarray(start, dtype=np.complex128).reshape(Bn, d)

    Cx = np.matmul(X, np.conj(np.swapaxes(X, 1, 2))) / N
    Cx = 0.5 * (Cx + np.conj(np.swapaxes(Cx, 1, 2)))

    w = start.copy()
    a = np.zeros_like(w)
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

    Cxi = np.zeros_like(Cx)
    if active.any():
        inv = np.linalg.inv(Cx[active])
        Cxi[active] = 0.5 * (inv + np.conj(np.swapaxes(inv, 1, 2)))

    with np.errstate(all="ignore"):
        q0 = np.real(np.einsum("bi,bij,bj->b", np.conj(w), Cx, w))
        ok0 = np.isfinite(q0) & (q0 > 0.0)
        w[ok0] = w[ok0] / np.sqrt(q0[ok0])[:, None]
    bad0 = active & ~ok0
    if bad0.any():
        failure[bad0] = "fixed-point-breakdown"
        active &= ~bad0

    crit_hist: list[np.ndarray] = []
    w_hist: list[np.ndarray] = []

    live = np.flatnonzero(active)
    Xp, Cxp, Cxip = X[live], Cx[live], Cxi[live]
    wp = w[live].copy()
    alive = np.ones(live.size, dtype=bool)

    def freeze(rows, reason, conv):
        gids = live[rows]
        w[gids] = wp[rows]
        if reason is not None:
            failure[gids] = reason
        converged[gids] = conv
        active[gids] = False
        alive[rows] = False

    for _ in range(max_iter):
        if not alive.any():
            break
        if alive.sum() < 0.9 * alive.size:
            keep = np.flatnonzero(alive)
            live = live[keep]
            Xp, Cxp, Cxip = Xp[keep], Cxp[keep], Cxip[keep]
            wp = wp[keep]
            alive = np.ones(live.size, dtype=bool)

        with np.errstate(all="ignore"):
            s = np.matmul(np.conj(wp)[:, None, :], Xp)[:, 0, :]
            s2 = np.abs(s) ** 2
            psi = np.conj(s) / (1.0 + s2)
            nu = np.mean(s2 / (1.0 + s2), axis=-1)
            rho = np.mean(1.0 / (1.0 + s2) ** 2, axis=-1)
            denom = rho - nu
            bad_den = ~(np.isfinite(denom) & (np.abs(denom) > BREAKDOWN_FLOOR))
            xpsi = np.matmul(Xp, psi[:, :, None])[:, :, 0] / N
            raw = (rho[:, None] * wp
                   - np.matmul(Cxip, xpsi[:, :, None])[:, :, 0])
            raw = raw / denom[:, None]
            q = np.real(np.einsum("bi,bij,bj->b", np.conj(raw), Cxp, raw))
            overlap = np.einsum("bi,bij,bj->b", np.conj(raw), Cxp, wp)
            bad_q = ~bad_den & ~(np.isfinite(q) & (q > 0.0))
            wnew = raw / np.sqrt(q)[:, None]
            crit = np.abs(1.0 - np.abs(overlap) / np.sqrt(q))
            bad_crit = (~bad_den & ~bad_q
                        & ~(np.isfinite(crit) & (crit < DIVERGENCE_NORM)))

        upd = alive & ~(bad_den | bad_q | bad_crit)
        wp[upd] = wnew[upd]
        iters[live[upd]] += 1
        if record:
            row = np.full(Bn, np.nan)
            row[live[upd]] = crit[upd]
            crit_hist.append(row)
        if record_iterates:
            snap = np.full((Bn, d), np.nan, dtype=np.complex128)
            snap[live[upd]] = wp[upd]
            w_hist.append(snap)

        for reason, mask in (("fixed-point-breakdown",
                              alive & (bad_den | bad_q)),
                             ("diverged", alive & bad_crit)):
            rows = np.flatnonzero(mask)
            if rows.size:
                freeze(rows, reason, conv=False)
        done = np.flatnonzero(upd & (crit < tol))
        if done.size:
            freeze(done, None, conv=True)

    still = np.flatnonzero(alive)
    if still.size:
        freeze(still, None, conv=False)

    with np.errstate(all="ignore"):
        bv = np.matmul(Cx, w[:, :, None])[:, :, 0]
        qv = np.real(np.einsum("bi,bi->b", np.conj(w), bv))
        ok = np.isfinite(qv) & (qv > 0.0)
        a[ok] = bv[ok] / qv[ok, None]

    out = {"a": a, "w": w, "iters": iters, "converged": converged,
           "failure": failure}
    if record:
        out["crit"] = (np.array(crit_hist) if crit_hist
                       else np.zeros((0, Bn)))
    if record_iterates:
        out["w_iterates"] = (np.array(w_hist) if w_hist
                             else np.zeros((0, Bn, d), dtype=np.complex128))
    return out


def fica_one_unit(X, w_ini, tol=1e-6, max_iter=1000, keep_iterates=False):
    """One-unit fixed-point extraction with the rational nonlinearity.

    Returns:
        (a, w, trace) with w normalized to unit output variance and a the
        coupled mixing-vector estimate.  ``trace.grad_norms`` holds the
        per-iteration convergence measure |1 - |w_new^H Cx w_old||.
        Raises :class:`SolverError` when |rho - nu| degenerates.
    """
    X = np.asarray(X, dtype=np.complex128)
    if X.ndim != 2:
        raise ValueError("X must have shape (d, N)")
    w0 = np.asarray(w_ini, dtype=np.complex128).reshape(1, -1)
    out = fica_batch(X[None], w0, tol=tol, max_iter=max_iter, record=True,
                     record_iterates=keep_iterates)
    n_iter = int(out["iters"][0])
    trace = SolverTrace(
        grad_norms=out["crit"][:n_iter, 0].copy(),
        n_iter=n_iter,
        converged=bool(out["converged"][0]),
        failure=out["failure"][0],
    )
    if keep_iterates:
        trace.w_iterates = out["w_iterates"][:n_iter, 0, :].copy()
    if trace.failure in ("fixed-point-breakdown", "singular-covariance"):
        raise SolverError(f"iteration stopped: {trace.failure}", trace)
    return out["a"][0], out["w"][0], trace


def fica_via_gradient(X, w_ini, tol=1e-6, max_iter=1000,
                      keep_iterates=False):
    """The fixed-point iteration rewritten as a preconditioned gradient step.

    Starting from w normalized to unit output variance, each iteration
    couples a, rescales psi to unit nu, steps through D = Cx^{-1/2} as
    w + mu D^H D delta with the adaptive step mu = nu / (rho - nu), and
    renormalizes.  Produces the same iterates as :func:`fica_one_unit` up
    to rounding; kept separate so the equivalence can be tested.

    Returns (a, w, trace) with the same conventions as
    :func:`fica_one_unit`.
    """
    X = np.asarray(X, dtype=np.complex128)
    d, N = X.shape
    Cx = sample_covariance(X)
    D = inv_sqrt(Cx)
    w = np.asarray(w_ini, dtype=np.complex128).reshape(-1)
    w = w / np.sqrt(np.real(np.vdot(w, Cx @ w)))
    crits: list[float] = []
    snaps: list[np.ndarray] = []
    converged = False
    n_iter = 0
    for _ in range(max_iter):
        a = couple_a_from_w(w, Cx)
        s = np.conj(w) @ X
        psi, rho = score_rational(s)
        s2 = np.abs(s) ** 2
        nu = float(np.mean(s2 / (1.0 + s2)))
        denom = rho - nu
        if not np.isfinite(denom) or abs(denom) <= BREAKDOWN_FLOOR:
            trace = SolverTrace(grad_norms=np.array(crits), n_iter=n_iter,
                                converged=False,
                                failure="fixed-point-breakdown")
            raise SolverError("iteration stopped: fixed-point-breakdown",
                              trace)
        delta = grad_w(w, a, X, psi / nu)
        raw = preconditioned_step(w, delta, D, nu / denom)
        q = float(np.real(np.vdot(raw, Cx @ raw)))
        crit = abs(1.0 - abs(np.vdot(raw, Cx @ w)) / np.sqrt(q))
        w = raw / np.sqrt(q)
        n_iter += 1
        crits.append(crit)
        if keep_iterates:
            snaps.append(w.copy())
        if crit < tol:
            converged = True
            break
    trace = SolverTrace(grad_norms=np.array(crits), n_iter=n_iter,
                        converged=converged)
    if keep_iterates:
        trace.w_iterates = np.array(snaps)
    return couple_a_from_w(w, Cx), w, trace


def _phi_matrix(Y: np.ndarray, model) -> np.ndarray:
    """Row-wise score of a (d, N) or (B, d, N) output stack."""
    return model.phi(Y)


def bs_delta(W, X, model=None) -> np.ndarray:
    """dW^H = W^{-1} - X phi(W X)^T / N for a full de-mixing matrix."""
    W = np.asarray(W, dtype=np.complex128)
    X = np.asarray(X, dtype=np.complex128)
    if model is None:
        model = ScoreModel("tanh-conjugate")
    N = X.shape[-1]
    Y = W @ X
    phi = _phi_matrix(Y, model)
    return np.linalg.inv(W) - (X @ phi.T) / N


def ng_delta(W, X, model=None) -> np.ndarray:
    """dW^H = W^H (I - W X phi(W X)^T / N); bs_delta left-scaled by W^H W."""
    W = np.asarray(W, dtype=np.complex128)
    X = np.asarray(X, dtype=np.complex128)
    if model is None:
        model = ScoreModel("tanh-conjugate")
    N = X.shape[-1]
    Y = W @ X
    phi = _phi_matrix(Y, model)
    d = W.shape[0]
    return np.conj(W.T) @ (np.eye(d) - (Y @ phi.T) / N)


def ica_batch(X, W0, method, mu=0.02, tol=1e-3, max_iter=5000,
              model=None, record=False) -> dict:
    """Advance a batch of full-ICA problems in lock step.

    Args:
        X: (B, d, N) mixtures.
        W0: (B, d, d) initial de-mixing matrices.
        method: "bs", "ng" or "scng".
        mu, tol, max_iter: step size, Frobenius stop on dW^H, cap.
        model: row-wise :class:`ScoreModel` (default tanh-conjugate).
        record: keep per-iteration update norms.

    Returns:
        dict with final "W" (B, d, d), "iters", "converged", "failure".
        Row 0 of each W tracks the signal it was initialized on.
    """
    if method not in ICA_METHODS:
        raise ValueError(f"method must be one of {ICA_METHODS}")
    if model is None:
        model = ScoreModel("tanh-conjugate")
    X = np.asarray(X, dtype=np.complex128)
    Bn, d, N = X.shape
    W = np.asarray(W0, dtype=np.complex128).reshape(Bn, d, d).copy()

    Cx = np.matmul(X, np.conj(np.swapaxes(X, 1, 2))) / N
    Cx = 0.5 * (Cx + np.conj(np.swapaxes(Cx, 1, 2)))
    eye = np.eye(d, dtype=np.complex128)

    iters = np.zeros(Bn, dtype=np.int64)
    converged = np.zeros(Bn, dtype=bool)
    failure = np.full(Bn, None, dtype=object)
    active = np.ones(Bn, dtype=bool)
    norm_hist: list[np.ndarray] = []

    live = np.flatnonzero(active)
    Xp, Cxp = X[live], Cx[live]
    Wp = W[live].copy()
    alive = np.ones(live.size, dtype=bool)

    def freeze(rows, reason, conv):
        gids = live[rows]
        W[gids] = Wp[rows]
        if reason is not None:
            failure[gids] = reason
        converged[gids] = conv
        active[gids] = False
        alive[rows] = False

    for _ in range(max_iter):
        if not alive.any():
            break
        if alive.sum() < 0.9 * alive.size:
            keep = np.flatnonzero(alive)
            live = live[keep]
            Xp, Cxp, Wp = Xp[keep], Cxp[keep], Wp[keep]
            alive = np.ones(live.size, dtype=bool)
        m = live.size

        with np.errstate(all="ignore"):
            Y = np.matmul(Wp, Xp)
            phi = model.phi(Y)
            phiT = np.swapaxes(phi, 1, 2)
            if method == "bs":
                sign, logdet = np.linalg.slogdet(Wp)
                bad_inv = ~np.isfinite(logdet) | (sign == 0)
                Winv = np.zeros_like(Wp)
                if (~bad_inv).any():
                    Winv[~bad_inv] = np.linalg.inv(Wp[~bad_inv])
                dWh = Winv - np.matmul(Xp, phiT) / N
            else:
                bad_inv = np.zeros(m, dtype=bool)
                G = np.matmul(Y, phiT) / N
                Wh = np.conj(np.swapaxes(Wp, 1, 2))
                dWh = np.matmul(Wh, eye - G)
            gn = np.linalg.norm(dWh, axis=(1, 2))
            bad_gn = ~bad_inv & ~(np.isfinite(gn) & (gn < DIVERGENCE_NORM))
            upd = alive & ~(bad_inv | bad_gn)

            Wh_new = np.conj(np.swapaxes(Wp[upd], 1, 2)) + mu * dWh[upd]
            Wp[upd] = np.conj(np.swapaxes(Wh_new, 1, 2))
            if method == "scng" and upd.any():
                qr = np.real(np.einsum("bik,bkl,bil->bi", np.conj(Wp[upd]),
                                       Cxp[upd], Wp[upd]))
                scale = np.sqrt(np.maximum(qr, 1e-300))
                Wp[upd] = Wp[upd] / scale[:, :, None]

        iters[live[upd]] += 1
        if record:
            row = np.full(Bn, np.nan)
            row[live[upd]] = gn[upd]
            norm_hist.append(row)

        for reason, mask in (("diverged", alive & (bad_inv | bad_gn)),):
            rows = np.flatnonzero(mask)
            if rows.size:
                freeze(rows, reason, conv=False)
        done = np.flatnonzero(upd & (gn < tol))
        if done.size:
            freeze(done, None, conv=True)

    still = np.flatnonzero(alive)
    if still.size:
        freeze(still, None, conv=False)

    out = {"W": W, "iters": iters, "converged": converged, "failure": failure}
    if record:
        out["grad_norms"] = (np.array(norm_hist) if norm_hist
                             else np.zeros((0, Bn)))
    return out


def full_ica(X, W0, method, mu=0.02, tol=1e-3, max_iter=5000, model=None):
    """Run one full-ICA problem; returns (W, trace)."""
    X = np.asarray(X, dtype=np.complex128)
    if X.ndim != 2:
        raise ValueError("X must have shape (d, N)")
    out = ica_batch(X[None], np.asarray(W0, dtype=np.complex128)[None],
                    method, mu=mu, tol=tol, max_iter=max_iter, model=model,
                    record=True)
    n_iter = int(out["iters"][0])
    trace = SolverTrace(grad_norms=out["grad_norms"][:n_iter, 0].copy(),
                        n_iter=n_iter,
                        converged=bool(out["converged"][0]),
                        failure=out["failure"][0])
    return out["W"][0], trace
