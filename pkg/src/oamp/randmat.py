"""Random orthogonal matrices, geometric singular-value spectra, and the
SVD-form sensing operator.

Systems are constructed directly in factored form A = U^T D V, with U and V
Haar-distributed orthogonal matrices and D an m-by-n rectangular diagonal, so
matrix-vector products cost two orthogonal multiplies and A is never
materialized.  All arithmetic is 64-bit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def sample_haar(n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw an n-by-n orthogonal matrix uniformly from the orthogonal group.

    QR decomposition of an IID standard-Gaussian matrix with the sign
    correction: column j of Q is multiplied by sign(R_jj).  The uncorrected
    QR output is not uniform (LAPACK pins the R diagonal's sign convention).
    Deterministic: the same generator state gives a bitwise-identical matrix.
    """
    if n < 1:
        raise ValueError(f"invalid dimension for orthogonal matrix: n={n}")
    g = rng.standard_normal((n, n))
    q, r = np.linalg.qr(g)
    signs = np.where(np.diagonal(r) >= 0.0, 1.0, -1.0)
    return q * signs


@dataclass(frozen=True)
class SpectrumSpec:
    """Geometric singular-value profile for an m-by-n operator (m <= n).

    Consecutive values satisfy d_i/d_{i+1} = kappa**(1/m) and the total power
    is sum(d_i**2) = n, so d_1/d_m = kappa**((m-1)/m) -> kappa as m grows.
    """

    m: int
    n: int
    kappa: float

    def __post_init__(self):
        if self.m < 1:
            raise ValueError(f"invalid spectrum: m={self.m} must be >= 1")
        if self.n < self.m:
            raise ValueError(f"invalid spectrum: need m <= n, got m={self.m}, n={self.n}")
        if self.kappa < 1.0:
            raise ValueError(f"invalid spectrum: condition number {self.kappa} < 1")


def geometric_spectrum(spec: SpectrumSpec) -> np.ndarray:
    """Return the decreasing singular values defined by `spec`.

    Pure function of the spec: no randomness involved.
    """
    ratio = spec.kappa ** (1.0 / spec.m)
    d = ratio ** (-np.arange(spec.m, dtype=np.float64))
    d *= np.sqrt(spec.n / np.dot(d, d))
    return d


@dataclass(frozen=True)
class SvdSystem:
    """One sampled instance of the linear model y = A x + noise.

    A = U^T D V with U (m-by-m) and V (n-by-n) orthogonal and D the m-by-n
    rectangular diagonal of `d`.  Immutable after construction; safe to share
    across worker processes/threads.
    """

    u: np.ndarray
    d: np.ndarray
    v: np.ndarray
    x_true: np.ndarray
    y: np.ndarray
    sigma2: float
    seed: int

    @property
    def m(self) -> int:
        return self.d.shape[0]

    @property
    def n(self) -> int:
        return self.v.shape[0]


def apply_forward(sys: SvdSystem, s: np.ndarray) -> np.ndarray:
    """Compute A s = U^T D (V s) without materializing A."""
    if s.shape != (sys.n,):
        raise ValueError(f"dimension mismatch: expected length {sys.n}, got {s.shape}")
    return sys.u.T @ (sys.d * (sys.v @ s)[: sys.m])


def apply_adjoint(sys: SvdSystem, r: np.ndarray) -> np.ndarray:
    """Compute A^T r = V^T D^T (U r)."""
    if r.shape != (sys.m,):
        raise ValueError(f"dimension mismatch: expected length {sys.m}, got {r.shape}")
    t = np.zeros(sys.n)
    t[: sys.m] = sys.d * (sys.u @ r)
    return sys.v.T @ t


def materialize(sys: SvdSystem) -> np.ndarray:
    """Dense m-by-n matrix A = U^T D V.  Test/diagnostic oracle only."""
    return sys.u.T @ (sys.d[:, None] * sys.v[: sys.m])
