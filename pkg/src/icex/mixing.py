r"""Single-source (de)mixing parameterization and orthogonal-constraint couplings.

The observation model is x = a s + y: one source of interest with mixing
vector a, plus a background y that spans the remaining d - 1 directions.
The pair (a, w) with w^H a = 1 fully parameterizes the de-mixing

    W = [[w^H], [B]],    B = [g, -gamma I_{d-1}],

where a = [gamma; g] and w = [beta; h]. B annihilates the source direction
(B a = 0), so z = B x estimates the background. The distortionless condition
w^H a = 1 is equivalent to conj(beta) gamma = 1 - h^H g.

The orthogonal constraint (zero sample correlation between the extracted
source and the extracted background) ties one vector to the other through
the mixture covariance:

    w = Cx^{-1} a / (a^H Cx^{-1} a)      (w from a)
    a = Cx w / (w^H Cx w)                (a from w)

The first coupling is exactly the MPDR beamformer steered by a.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .linalg import hermitian_solve

__all__ = [
    "DegenerateParameterError",
    "DegenerateSignalError",
    "ExtractionParams",
    "ModelMatrices",
    "background_basis",
    "assemble",
    "couple_w_from_a",
    "couple_a_from_w",
    "mpdr",
]

# |gamma| below this (relative to ||a||) makes the 1/gamma block meaningless.
GAMMA_FLOOR = 1e-12

LINK_TOL = 1e-10


class DegenerateParameterError(ValueError):
    """gamma is (numerically) zero or the pair violates w^H a = 1."""


class DegenerateSignalError(ValueError):
    """A quadratic form that must be positive is numerically zero."""


@dataclass(frozen=True)
class ExtractionParams:
    """A validated (a, w) pair with w^H a = 1.

    Attributes:
        a: mixing vector, a = [gamma; g].
        w: separating vector, w = [beta; h].
    """

    a: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.complex128).reshape(-1)
        w = np.asarray(self.w, dtype=np.complex128).reshape(-1)
        if a.shape != w.shape or a.size < 2:
            raise ValueError("a and w must share a length of at least 2")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "w", w)
        norm_a = np.linalg.norm(a)
        if np.abs(a[0]) < GAMMA_FLOOR * max(norm_a, 1.0):
            raise DegenerateParameterError("gamma = a[0] is numerically zero")
        link = np.vdot(w, a)  # w^H a
        if np.abs(link - 1.0) > LINK_TOL:
            raise DegenerateParameterError(
                f"w^H a = {link:.3e}, expected 1; use ExtractionParams.repair"
            )

    @classmethod
    def repair(cls, a, w) -> "ExtractionParams":
        """Rescale w so that w^H a = 1 holds exactly, then validate."""
        a = np.asarray(a, dtype=np.complex128).reshape(-1)
        w = np.asarray(w, dtype=np.complex128).reshape(-1)
        link = np.vdot(w, a)
        if np.abs(link) <= GAMMA_FLOOR:
            raise DegenerateParameterError("w^H a is numerically zero; cannot repair")
        return cls(a, w / np.conj(link))

    @classmethod
    def from_coupling(cls, a=None, w=None, Cx=None) -> "ExtractionParams":
        """Complete the pair from one vector via the orthogonal constraint."""
        if Cx is None or (a is None) == (w is None):
            raise ValueError("provide Cx and exactly one of a, w")
        if a is not None:
            return cls(np.asarray(a, dtype=np.complex128).reshape(-1),
                       couple_w_from_a(a, Cx))
        return cls(couple_a_from_w(w, Cx),
                   np.asarray(w, dtype=np.complex128).reshape(-1))

    @property
    def d(self) -> int:
        return self.a.size

    @property
    def gamma(self) -> complex:
        return complex(self.a[0])

    @property
    def g(self) -> np.ndarray:
        return self.a[1:]

    @property
    def beta(self) -> complex:
        return complex(self.w[0])

    @property
    def h(self) -> np.ndarray:
        return self.w[1:]

    def normalized_gamma(self) -> "ExtractionParams":
        """Rescale so that gamma = 1 (spatial-image scaling of the source)."""
        gamma = self.a[0]
        return ExtractionParams(self.a / gamma, self.w * np.conj(gamma))


@dataclass(frozen=True)
class ModelMatrices:
    """Assembled mixing/de-mixing matrices for one (a, w) pair."""

    A_ice: np.ndarray
    W_ice: np.ndarray
    B: np.ndarray
    det_W: complex


def background_basis(a) -> np.ndarray:
    """B = [g, -gamma I_{d-1}]; satisfies B a = 0 by construction."""
    a = np.asarray(a, dtype=np.complex128).reshape(-1)
    d = a.size
    B = np.zeros((d - 1, d), dtype=np.complex128)
    B[:, 0] = a[1:]
    B[np.arange(d - 1), np.arange(1, d)] = -a[0]
    return B


def assemble(params: ExtractionParams) -> ModelMatrices:
    """Build A_ice, W_ice, B and det(W_ice) from a validated pair."""
    a, w = params.a, params.w
    d = a.size
    gamma = a[0]
    if np.abs(gamma) < GAMMA_FLOOR * max(np.linalg.norm(a), 1.0):
        raise DegenerateParameterError("gamma too small to assemble")
    g, h = a[1:], w[1:]

    W_ice = np.zeros((d, d), dtype=np.complex128)
    W_ice[0, :] = w.conj()
    W_ice[1:, :] = background_basis(a)

    A_ice = np.zeros((d, d), dtype=np.complex128)
    A_ice[:, 0] = a
    A_ice[0, 1:] = h.conj()
    A_ice[1:, 1:] = (np.outer(g, h.conj()) - np.eye(d - 1)) / gamma

    det_W = (-1.0) ** (d - 1) * gamma ** (d - 2)
    return ModelMatrices(A_ice=A_ice, W_ice=W_ice, B=W_ice[1:, :], det_W=det_W)


def couple_w_from_a(a, Cx) -> np.ndarray:
    """w = Cx^{-1} a / (a^H Cx^{-1} a), the MPDR weights steered by a."""
    a = np.asarray(a, dtype=np.complex128).reshape(-1)
    u = hermitian_solve(Cx, a)
    denom = np.vdot(a, u)  # a^H Cx^{-1} a, real and positive for PD Cx
    if np.abs(denom) <= linalg.EPS:
        raise DegenerateSignalError("a^H Cx^{-1} a is numerically zero")
    return u / denom


def couple_a_from_w(w, Cx) -> np.ndarray:
    """a = Cx w / (w^H Cx w)."""
    w = np.asarray(w, dtype=np.complex128).reshape(-1)
    Cx = np.asarray(Cx, dtype=np.complex128)
    b = Cx @ w
    denom = np.vdot(w, b)  # w^H Cx w >= 0
    if np.abs(denom) <= 1e-15 * max(np.linalg.norm(Cx), 1.0):
        raise DegenerateSignalError("w^H Cx w is numerically zero")
    return b / denom


def mpdr(a, Cx, X) -> np.ndarray:
    """Extract s_hat = w^H X with the MPDR beamformer steered by a.

    With the true mixing vector and the exact model covariance
    Cx = A diag(sigma_s^2, C_z) A^H, the output equals the source exactly.
    """
    w = couple_w_from_a(a, Cx)
    X = np.asarray(X, dtype=np.complex128)
    return w.conj() @ X
