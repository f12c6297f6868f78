r"""Source-model nonlinearities, their normalization, and derivative terms.

A score function is the negative Wirtinger derivative of a log model
density, phi(xi) = -d log f(xi) / d xi. The gradient solvers only ever use
phi through the products X phi^T / N, and they rescale phi each iteration so
that the empirical stationarity condition E[s phi(s)] = 1 holds exactly for
the current signal estimate (see :func:`normalize`).

Production kinds:

* ``tanh-conjugate``  - phi(xi) = conj(tanh(xi)), the circular heavy-tail
  workhorse for single-mixture extraction.
* ``rational-fica``   - psi(xi) = conj(xi) / (1 + |xi|^2) together with its
  mean derivative rho, used by the one-unit fixed-point algorithm.
* ``vector-coupled``  - phi^k(xi^1..xi^K) = conj(tanh(xi^k)) / r with
  r = sqrt(sum_l |xi^l|^2), coupling K jointly extracted signals.
* ``piloted-vector``  - as above with a known pilot signal appended as the
  (K+1)-th variable inside r.

``conj(tanh(.))`` is not the gradient of any real log density (its mixed
Wirtinger partials are inconsistent), so derivative-based verification
cannot run against it. Each model therefore also exposes a matched
integrable pair: :meth:`ScoreModel.log_density` and
:meth:`ScoreModel.exact_score`, where the latter is the exact Wirtinger
score of the former. Finite-difference checks of the contrast gradients use
these pairs through the same code paths that consume the production phi.
These exact scores are radial (phi = q(|xi|) conj(xi) with real q), which
makes E[s phi(s)] real on any sample, a property the a-side gradient
verification relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DegenerateScoreError",
    "ScoreEval",
    "ScoreModel",
    "ScaledModel",
    "score_tanh",
    "score_rational",
    "score_vector",
    "normalize",
]

# Radius floor for the vector-score denominator; tanh(0) = 0 keeps the
# all-zero sample at an exact zero output.
DENOM_FLOOR = 1e-12

NU_FLOOR = 1e-12

KINDS = ("tanh-conjugate", "rational-fica", "vector-coupled", "piloted-vector")


class DegenerateScoreError(ValueError):
    """The extracted signal is uncorrelated with its score (nu ~ 0)."""


def _check_finite(x: np.ndarray):
    if not np.all(np.isfinite(x)):
        raise ValueError("score input contains non-finite entries")


def _conj_tanh_scaled(re: np.ndarray, im: np.ndarray, scale) -> np.ndarray:
    """conj(tanh(re + i im)) * scale in real arithmetic.

    tanh(x + iy) = (tanh x (1 + tan^2 y) + i tan y (1 - tanh^2 x))
                   / (1 + tanh^2 x tan^2 y); the denominator is >= 1, so
    the only precision loss is that of tan itself near its poles, where
    tanh is genuinely ill-conditioned.  Real tanh/tan vectorize several
    times faster than complex tanh, and this is the solvers' hottest op.
    """
    tx = np.tanh(re)
    ty = np.tan(im)
    tx2 = tx * tx
    ty2 = ty * ty
    g = scale / (1.0 + tx2 * ty2)
    out = np.empty(np.broadcast_shapes(g.shape, tx.shape),
                   dtype=np.complex128)
    out.real = tx * (1.0 + ty2) * g
    out.imag = ty * (tx2 - 1.0) * g
    return out


def _ctanh(z: np.ndarray) -> np.ndarray:
    """Complex tanh of a complex array via :func:`_conj_tanh_scaled`."""
    return np.conj(_conj_tanh_scaled(z.real, z.imag, np.float64(1.0)))


def score_tanh(s_hat) -> np.ndarray:
    """conj(tanh(xi)) entrywise; complex tanh applied to the full argument."""
    s = np.asarray(s_hat, dtype=np.complex128)
    _check_finite(s)
    return np.conj(_ctanh(s))


def score_rational(s_hat):
    """psi(xi) = conj(xi) / (1 + |xi|^2) and rho = mean d psi / d conj(xi).

    Returns:
        (psi, rho): psi entrywise, rho = mean of 1 / (1 + |xi|^2)^2, which
        is the exact Wirtinger derivative of psi averaged over samples.
    """
    s = np.asarray(s_hat, dtype=np.complex128)
    _check_finite(s)
    denom = 1.0 + np.abs(s) ** 2
    psi = np.conj(s) / denom
    rho = float(np.mean(1.0 / denom**2))
    return psi, rho


def score_vector(s_hats, pilot=None) -> np.ndarray:
    """phi^k = conj(tanh(xi^k)) / r with r = sqrt(sum_l |xi^l|^2 (+ |p|^2))."""
    S = np.atleast_2d(np.asarray(s_hats, dtype=np.complex128))
    _check_finite(S)
    power = np.sum(np.abs(S) ** 2, axis=0)
    if pilot is not None:
        p = np.asarray(pilot, dtype=np.complex128).reshape(-1)
        if p.shape[0] != S.shape[1]:
            raise ValueError("pilot length must match the sample count")
        power = power + np.abs(p) ** 2
    r = np.maximum(np.sqrt(power), DENOM_FLOOR)
    phi = np.conj(_ctanh(S)) / r
    if np.asarray(s_hats).ndim == 1:
        return phi[0]
    return phi


def normalize(phi, s_hat):
    """Rescale phi so that s_hat phi^T / N = 1 exactly.

    Works on single signals (1-D) or per-row on K x N stacks. Raises
    :class:`DegenerateScoreError` when |nu| <= 1e-12 for any row.
    """
    phi = np.asarray(phi, dtype=np.complex128)
    s = np.asarray(s_hat, dtype=np.complex128)
    if phi.shape != s.shape:
        raise ValueError("phi and s_hat must have identical shapes")
    if phi.ndim == 1:
        nu = np.mean(s * phi)
        if np.abs(nu) <= NU_FLOOR:
            raise DegenerateScoreError(f"|nu| = {np.abs(nu):.2e} <= {NU_FLOOR:g}")
        return phi / nu, nu
    nu = np.mean(s * phi, axis=1)
    if np.any(np.abs(nu) <= NU_FLOOR):
        raise DegenerateScoreError("degenerate nu in at least one row")
    return phi / nu[:, None], nu


def _log_cosh(r: np.ndarray) -> np.ndarray:
    # log cosh(r) = r + log1p(exp(-2r)) - log 2, overflow-safe for r >= 0
    return r + np.log1p(np.exp(-2.0 * r)) - np.log(2.0)


def _radial_tanh_score(S: np.ndarray, r: np.ndarray) -> np.ndarray:
    # exact Wirtinger score of -log cosh(r): tanh(r) conj(xi) / (2 r)
    rf = np.maximum(r, DENOM_FLOOR)
    return np.tanh(rf) * np.conj(S) / (2.0 * rf)


@dataclass(frozen=True)
class ScoreEval:
    """One score evaluation: values, per-row nu, and rho when defined."""

    phi: np.ndarray
    nu: np.ndarray
    rho: float | None = None


@dataclass(frozen=True)
class ScoreModel:
    """An immutable source-model nonlinearity.

    Attributes:
        kind: one of ``tanh-conjugate``, ``rational-fica``,
            ``vector-coupled``, ``piloted-vector``.
        K: number of coupled mixtures (1 for the scalar kinds).
        pilot: pilot signal of length N, required by ``piloted-vector``.
        rescale: when True (default), the production :meth:`phi` evaluates
            the nonlinearity on inputs scaled to unit empirical variance
            per row (sigma re-estimated on every call) and applies the
            chain-rule 1/sigma factor. ``rational-fica`` never rescales:
            the fixed-point algorithm keeps its signal at unit variance by
            construction. :meth:`log_density` and :meth:`exact_score` never
            rescale either, so they form a w-independent integrable pair.
    """

    kind: str = "tanh-conjugate"
    K: int = 1
    pilot: np.ndarray | None = field(default=None)
    rescale: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown score kind {self.kind!r}")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.kind in ("tanh-conjugate", "rational-fica") and self.K != 1:
            raise ValueError(f"{self.kind} is a scalar kind; K must be 1")
        if self.kind == "piloted-vector":
            if self.pilot is not None:
                object.__setattr__(
                    self, "pilot",
                    np.asarray(self.pilot, dtype=np.complex128).reshape(-1))
        elif self.pilot is not None:
            raise ValueError(f"{self.kind} does not accept a pilot")

    @property
    def is_vector(self) -> bool:
        return self.kind in ("vector-coupled", "piloted-vector")

    def _shaped(self, s_hats) -> np.ndarray:
        """Validate shape. Scalar kinds take (..., N); vector kinds (..., K, N).

        Leading axes are independent batch problems (used by the trial-batched
        solver engines); the public single-problem calls are the no-batch case.
        """
        S = np.asarray(s_hats, dtype=np.complex128)
        if self.is_vector:
            if S.ndim < 2 or S.shape[-2] != self.K:
                raise ValueError(f"expected (..., {self.K}, N) input, got {S.shape}")
        elif S.ndim < 1:
            raise ValueError("expected at least a 1-D signal")
        return S

    def _pilot_for(self, S: np.ndarray, pilot) -> np.ndarray | None:
        if pilot is None:
            pilot = self.pilot
        if self.kind == "piloted-vector":
            if pilot is None:
                raise ValueError("piloted-vector requires a pilot signal")
            p = np.asarray(pilot, dtype=np.complex128)
            if p.shape[-1] != S.shape[-1]:
                raise ValueError("pilot length must match the sample count")
            return p
        if pilot is not None:
            raise ValueError(f"{self.kind} does not accept a pilot")
        return None

    def phi(self, s_hats, pilot=None) -> np.ndarray:
        """Production score values, same shape as the input.

        ``pilot`` overrides the model's own pilot; batched callers pass one
        pilot row per batch problem, broadcast against the input shape.
        """
        S = self._shaped(s_hats)
        _check_finite(S)
        p = self._pilot_for(S, pilot)
        sr, si = S.real, S.imag
        s2 = sr * sr + si * si
        if self.kind == "rational-fica":
            return np.conj(S) / (1.0 + s2)
        if self.rescale:
            sigma = np.sqrt(np.maximum(np.mean(s2, axis=-1, keepdims=True),
                                       DENOM_FLOOR**2))
            inv = 1.0 / sigma
            sr = sr * inv
            si = si * inv
            # per-row rescale folds into the radius as 1/sigma_k^2
            s2 = s2 * (inv * inv)
        else:
            inv = np.float64(1.0)
        if self.kind == "tanh-conjugate":
            return _conj_tanh_scaled(sr, si, inv)
        power = np.sum(s2, axis=-2, keepdims=True)
        if p is not None:
            p2 = p.real**2 + p.imag**2
            if self.rescale:
                p2 = p2 / np.maximum(np.mean(p2, axis=-1, keepdims=True),
                                     DENOM_FLOOR**2)
            power = power + p2[..., None, :]
        r = np.maximum(np.sqrt(power), DENOM_FLOOR)
        return _conj_tanh_scaled(sr, si, inv * (1.0 / r))

    def evaluate(self, s_hats, pilot=None) -> ScoreEval:
        """phi together with per-signal nu (and rho for the rational kind)."""
        S = self._shaped(s_hats)
        phi = self.phi(S, pilot=pilot)
        nu = np.mean(S * phi, axis=-1)
        rho = None
        if self.kind == "rational-fica":
            rho = np.mean(1.0 / (1.0 + np.abs(S) ** 2) ** 2, axis=-1)
            if np.ndim(rho) == 0:
                rho = float(rho)
        return ScoreEval(phi=phi, nu=nu, rho=rho)

    def _radius(self, S: np.ndarray, pilot=None) -> np.ndarray:
        p = self._pilot_for(S, pilot)
        power = np.sum(np.abs(S) ** 2, axis=-2)
        if p is not None:
            power = power + np.abs(p) ** 2
        return np.sqrt(power)

    def log_density(self, s_hats, pilot=None) -> np.ndarray:
        """Per-sample log f of the matched integrable model (real, no sigma).

        Unlike :meth:`phi`, no variance re-estimation takes place, so this is
        a fixed function of its argument and finite differences through it
        are meaningful.
        """
        S = self._shaped(s_hats)
        if self.kind == "rational-fica":
            return -np.log1p(np.abs(S) ** 2)
        if self.kind == "tanh-conjugate":
            return -_log_cosh(np.abs(S))
        return -_log_cosh(self._radius(S, pilot))

    def exact_score(self, s_hats, pilot=None) -> np.ndarray:
        """Exact Wirtinger score of :meth:`log_density`, same shape as input."""
        S = self._shaped(s_hats)
        if self.kind == "rational-fica":
            return np.conj(S) / (1.0 + np.abs(S) ** 2)
        if self.kind == "tanh-conjugate":
            return _radial_tanh_score(S, np.abs(S))
        return _radial_tanh_score(S, self._radius(S, pilot)[..., None, :])


class ScaledModel:
    """A score model with log-density and exact score scaled by a real factor.

    Scaling the log density by c scales its score by c; choosing
    c = 1/nu makes the scaled score satisfy E[s phi(s)] = 1 exactly on a
    given sample, which derivative checks of the a-side gradients require.
    """

    def __init__(self, base: ScoreModel, factor: float):
        self.base = base
        self.factor = float(factor)

    @property
    def kind(self) -> str:
        return self.base.kind

    @property
    def K(self) -> int:
        return self.base.K

    @property
    def pilot(self):
        return self.base.pilot

    @property
    def is_vector(self) -> bool:
        return self.base.is_vector

    def log_density(self, s_hats, pilot=None) -> np.ndarray:
        return self.base.log_density(s_hats, pilot=pilot) * self.factor

    def exact_score(self, s_hats, pilot=None) -> np.ndarray:
        return self.base.exact_score(s_hats, pilot=pilot) * self.factor
