"""Shared oracles and instance builders for the test suite.

Everything here is derived directly from definitions (finite differences,
plain numpy couplings) rather than from the package's own verification
helpers, so gradient and identity tests exercise an independent route.
"""

from __future__ import annotations

import numpy as np

FD_STEP = 1e-5


def crandn(rng: np.random.Generator, shape=None) -> np.ndarray:
    """Circular complex normal samples with unit variance per entry."""
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) / np.sqrt(2.0)


def wirtinger_fd(f, x0, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences of a real scalar f as a conj-gradient.

    Perturbs the real and imaginary part of each coordinate separately and
    combines them as (d/dRe + i d/dIm)/2, the derivative with respect to
    the conjugated coordinate.
    """
    x0 = np.asarray(x0, dtype=np.complex128)
    grad = np.zeros_like(x0)
    for idx in np.ndindex(*x0.shape):
        for unit in (1.0, 1.0j):
            xp = x0.copy()
            xm = x0.copy()
            xp[idx] += h * unit
            xm[idx] -= h * unit
            diff = (f(xp) - f(xm)) / (2.0 * h)
            grad[idx] += diff if unit == 1.0 else 1.0j * diff
    return grad / 2.0


def rel_err(got, want) -> float:
    got = np.asarray(got).ravel()
    want = np.asarray(want).ravel()
    scale = max(np.linalg.norm(want), 1e-30)
    return float(np.linalg.norm(got - want) / scale)


def hermitian_pd(rng: np.random.Generator, d: int, ridge: float = 0.5) -> np.ndarray:
    G = crandn(rng, (d, d))
    M = G @ G.conj().T / d + ridge * np.eye(d)
    return 0.5 * (M + M.conj().T)


def sample_cov(X: np.ndarray) -> np.ndarray:
    C = X @ X.conj().T / X.shape[-1]
    return 0.5 * (C + C.conj().T)


def couple_w(a: np.ndarray, Cx: np.ndarray) -> np.ndarray:
    """Distortionless w from a: Cx^{-1} a / (a^H Cx^{-1} a)."""
    u = np.linalg.solve(Cx, a)
    return u / np.vdot(a, u)


def couple_a(w: np.ndarray, Cx: np.ndarray) -> np.ndarray:
    """Coupled mixing vector from w: Cx w / (w^H Cx w)."""
    b = Cx @ w
    return b / np.vdot(w, b)


def background(a: np.ndarray) -> np.ndarray:
    """[g, -gamma I] from the definition, independent of the package."""
    d = a.size
    B = np.zeros((d - 1, d), dtype=np.complex128)
    B[:, 0] = a[1:]
    B[:, 1:] = -a[0] * np.eye(d - 1)
    return B


def frozen_R(a: np.ndarray, Cx: np.ndarray) -> np.ndarray:
    """Inverse background covariance used as the fixed contrast weighting."""
    B = background(a)
    Cz = B @ Cx @ B.conj().T
    R = np.linalg.inv(0.5 * (Cz + Cz.conj().T))
    return 0.5 * (R + R.conj().T)


def mixture(rng: np.random.Generator, d: int, N: int,
            heavy: bool = True) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """A well-conditioned complex mixture X = A S with a heavy-tailed row 0."""
    A = crandn(rng, (d, d)) + 1.5 * np.eye(d)
    S = crandn(rng, (d, N))
    if heavy:
        S[0] *= np.sqrt(2.0) * np.abs(crandn(rng, (N,)))
    return A @ S, A, S


def ice_instance(rng: np.random.Generator, d: int, N: int) -> dict:
    """A mixture with a coupled (a, w) pair away from the solution."""
    X, A, S = mixture(rng, d, N)
    Cx = sample_cov(X)
    a = A[:, 0] + 0.3 * crandn(rng, (d,))
    w = couple_w(a, Cx)
    return {"X": X, "A": A, "S": S, "Cx": Cx, "a": a, "w": w}


def joint_instance(rng: np.random.Generator, K: int, d: int, N: int) -> dict:
    """K parallel mixtures whose targets share one amplitude envelope."""
    env = np.sqrt(2.0) * np.abs(crandn(rng, (N,)))
    X = np.empty((K, d, N), dtype=np.complex128)
    A = np.empty((K, d, d), dtype=np.complex128)
    S = np.empty((K, d, N), dtype=np.complex128)
    for k in range(K):
        A[k] = crandn(rng, (d, d)) + 1.5 * np.eye(d)
        S[k] = crandn(rng, (d, N))
        S[k, 0] = env * np.exp(2j * np.pi * rng.uniform(size=N))
        X[k] = A[k] @ S[k]
    return {"X": X, "A": A, "S": S}
