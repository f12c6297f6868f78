"""Dense complex linear-algebra substrate and seeded random generation.

All vectors are 1-D ``complex128`` arrays and all matrices are 2-D
``complex128`` arrays. Covariances are Hermitian positive (semi)definite;
operations that require definiteness raise :class:`SingularMatrixError` or
:class:`NotPositiveDefiniteError` instead of returning garbage.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "EPS",
    "COND_LIMIT",
    "SingularMatrixError",
    "NotPositiveDefiniteError",
    "Rng",
    "sample_covariance",
    "hermitian_solve",
    "inv_sqrt",
    "random_unitary",
]

EPS = 1e-12

# Solves refuse covariances with condition estimates beyond this.
COND_LIMIT = 1e12


class SingularMatrixError(np.linalg.LinAlgError):
    """Matrix is numerically singular (condition estimate > COND_LIMIT)."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Matrix is not Hermitian positive definite."""


class Rng:
    """Counter-based random stream with deterministic seed-splitting.

    Wraps a Philox generator so that an identical ``seed`` (and split path)
    reproduces the identical draw sequence across runs. Child streams from
    :meth:`split` are statistically independent of the parent and of each
    other, and never consume parent state, so parallel trial workers can
    derive their own streams in any order.
    """

    def __init__(self, seed: int, _path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self._path = tuple(int(p) for p in _path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self._path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def split(self, index: int) -> "Rng":
        """Derive the ``index``-th child stream without touching this one."""
        return Rng(self.seed, self._path + (int(index),))

    def uniform(self, size=None) -> np.ndarray:
        """Uniform draws on [0, 1)."""
        return self._gen.random(size)

    def standard_normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def complex_normal(self, size=None) -> np.ndarray:
        """Circular complex Gaussian with unit variance (E|x|^2 = 1)."""
        re = self._gen.standard_normal(size)
        im = self._gen.standard_normal(size)
        return (re + 1j * im) / np.sqrt(2.0)

    def choice(self, choices, size=None):
        """Uniform choice among ``choices`` using one uniform draw each."""
        u = np.asarray(self._gen.random(size))
        idx = np.minimum((u * len(choices)).astype(int), len(choices) - 1)
        return np.asarray(choices)[idx]


def _as_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.complex128)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise ValueError(f"expected a nonempty 2-D array, got shape {X.shape}")
    return X


def sample_covariance(X) -> np.ndarray:
    """Sample covariance X X^H / N, symmetrized to be exactly Hermitian."""
    X = _as_matrix(X)
    N = X.shape[1]
    C = X @ X.conj().T / N
    return 0.5 * (C + C.conj().T)


def _cond_hermitian(C: np.ndarray) -> float:
    lam = np.linalg.eigvalsh(C)
    lo = lam.min()
    hi = np.abs(lam).max()
    if lo <= 0.0:
        return np.inf
    return hi / lo


def hermitian_solve(C, v) -> np.ndarray:
    """Solve C u = v for Hermitian positive definite C.

    Uses a Cholesky factorization; the factorization doubles as the
    definiteness check. Raises :class:`SingularMatrixError` when the
    condition estimate exceeds ``COND_LIMIT``.
    """
    C = _as_matrix(C)
    v = np.asarray(v, dtype=np.complex128)
    if C.shape[0] != C.shape[1]:
        raise ValueError("covariance must be square")
    try:
        L = np.linalg.cholesky(C)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc
    # diag(L)^2 brackets the spectrum tightly enough for a guard at d <= 64
    dg = np.abs(np.diag(L))
    if (dg.min() / dg.max()) ** 2 * COND_LIMIT < 1.0 and _cond_hermitian(C) > COND_LIMIT:
        raise SingularMatrixError(
            f"condition estimate exceeds {COND_LIMIT:g}"
        )
    y = np.linalg.solve(L, v)
    return np.linalg.solve(L.conj().T, y)


def inv_sqrt(C) -> np.ndarray:
    """Hermitian inverse square root C^{-1/2} via eigendecomposition."""
    C = _as_matrix(C)
    lam, V = np.linalg.eigh(C)
    if lam.min() <= EPS * max(lam.max(), 0.0) or lam.min() <= 0.0:
        raise NotPositiveDefiniteError("matrix is not positive definite")
    D = V * (1.0 / np.sqrt(lam))
    S = D @ V.conj().T
    return 0.5 * (S + S.conj().T)


def random_unitary(d: int, rng: Rng) -> np.ndarray:
    """Haar-distributed d x d unitary matrix.

    QR of a complex Gaussian matrix with the R-diagonal phase fix, which
    makes the factorization unique and the resulting Q Haar-distributed.
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    G = rng.complex_normal((d, d))
    Q, R = np.linalg.qr(G)
    diag = np.diag(R).copy()
    diag = np.where(np.abs(diag) < EPS, 1.0, diag)
    return Q * (diag / np.abs(diag))
