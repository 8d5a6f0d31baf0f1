"""Dense spectral utilities.

Eigenvalue bounds of PSD matrices, spectra of Kronecker sums, null-space
bases and kernel-preserving Chebyshev polynomials of linear operators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

ZERO_TOL_REL = 1e-9


class SpectralError(ValueError):
    pass


class NonSymmetric(SpectralError):
    pass


class AllZeroSpectrum(SpectralError):
    pass


class HypothesisViolated(SpectralError):
    pass


class TrivialKernel(SpectralError):
    pass


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class SpectralBounds:
    """Largest and smallest nonzero eigenvalue of a PSD operator."""

    lambda_max: float
    lambda_min_plus: float
    rank: int

    def __post_init__(self):
        if not (0.0 < self.lambda_min_plus <= self.lambda_max * (1 + 1e-12)):
            raise SpectralError(
                f"invalid bounds: lambda_min_plus={self.lambda_min_plus}, "
                f"lambda_max={self.lambda_max}"
            )

    @property
    def chi(self) -> float:
        """Condition number on the range, ``lambda_max / lambda_min_plus``."""
        return max(1.0, self.lambda_max / self.lambda_min_plus)

    def scaled(self, c: float) -> "SpectralBounds":
        return SpectralBounds(c * self.lambda_max, c * self.lambda_min_plus, self.rank)


def _nonzero(values: np.ndarray, zero_tol_rel: float) -> np.ndarray:
    top = values.max(initial=0.0)
    return values[values > zero_tol_rel * top]


def spectral_bounds(M: np.ndarray, zero_tol_rel: float = ZERO_TOL_REL) -> SpectralBounds:
    """Spectral bounds of a symmetric positive semidefinite matrix.

    Eigenvalues below ``zero_tol_rel * lambda_max`` count as exact zeros.

    Raises
    ------
    NonSymmetric
        If ``M`` is not symmetric to relative precision 1e-10.
    AllZeroSpectrum
        If ``M`` is numerically zero.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {M.shape}")
    scale = np.abs(M).max(initial=0.0)
    if np.abs(M - M.T).max(initial=0.0) > 1e-10 * max(scale, 1e-300):
        raise NonSymmetric("matrix is not symmetric")
    eig = np.linalg.eigvalsh((M + M.T) / 2)
    lmax = eig[-1]
    if lmax <= 0.0:
        raise AllZeroSpectrum("matrix has no positive eigenvalue")
    if eig[0] < -1e-10 * lmax:
        raise SpectralError(f"matrix is not PSD: lambda_min={eig[0]}")
    nz = _nonzero(eig, zero_tol_rel)
    return SpectralBounds(float(lmax), float(nz.min()), int(nz.size))


def _psd_singular_values(P: np.ndarray) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2:
        raise DimensionMismatch(f"expected a matrix, got shape {P.shape}")
    return np.linalg.svd(P, compute_uv=False)


def kronecker_sum_bounds(
    P: np.ndarray, Q: np.ndarray, zero_tol_rel: float = ZERO_TOL_REL
) -> SpectralBounds:
    """Singular value bounds of ``kron(P, I) + kron(I, Q)`` for PSD ``P``, ``Q``.

    Both matrices must be singular.  The spectrum of the sum is then
    ``{a_i + b_j}``, so its largest value is ``max(a) + max(b)`` and its smallest
    nonzero value is ``min(min+(a), min+(b))``.  The Kronecker product is never
    formed.
    """
    a = _psd_singular_values(P)
    b = _psd_singular_values(Q)
    top = max(a.max(initial=0.0), b.max(initial=0.0))
    if top == 0.0:
        raise AllZeroSpectrum("both summands are zero")
    zeros = []
    positive = []
    for name, s in (("P", a), ("Q", b)):
        cut = zero_tol_rel * s.max(initial=0.0)
        if s.min() > cut:
            raise HypothesisViolated(f"{name} has trivial kernel (sigma_min={s.min():.3e})")
        pos = s[s > cut]
        zeros.append(s.size - pos.size)
        positive.append(pos)
    lo = min(p.min() for p in positive if p.size)
    rank = a.size * b.size - zeros[0] * zeros[1]
    return SpectralBounds(float(a.max() + b.max()), float(lo), int(rank))


def nullspace_basis(B: np.ndarray, zero_tol_rel: float = ZERO_TOL_REL) -> np.ndarray:
    """Orthonormal basis of ``ker B`` stored as columns.

    Returns ``E`` of shape ``(d, d - rank(B))`` with ``B @ E ~ 0`` and
    ``E.T @ E = I``; every solution of ``B x = 0`` is ``x = E @ t``.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    d = B.shape[1]
    _, s, vt = np.linalg.svd(B, full_matrices=True)
    top = s.max(initial=0.0)
    rank = int(np.sum(s > zero_tol_rel * top)) if top > 0 else 0
    if rank == d:
        raise TrivialKernel("B has full column rank")
    return vt[rank:].T.copy()


def _as_operator(base) -> Callable[[np.ndarray], np.ndarray]:
    if callable(base):
        return base
    mat = np.asarray(base, dtype=float)
    return lambda v: mat @ v


@dataclass
class ChebyshevOperator:
    """Degree-``K`` Chebyshev polynomial ``P_K`` of a PSD operator.

    ``P_K(x) = 1 - T_K((hi + lo - 2x) / (hi - lo)) / T_K((hi + lo) / (hi - lo))``
    so that ``P_K(0) = 0`` and ``P_K`` maps ``[lo, hi]`` into
    ``[1 - 1/T, 1 + 1/T]`` with ``T = T_K((hi + lo) / (hi - lo))``.  When
    ``lo == hi`` the polynomial degenerates to ``x / hi``.

    ``on_apply`` is called once per application of ``base`` so communication or
    matrix-multiplication meters can be charged.
    """

    base: Callable[[np.ndarray], np.ndarray]
    degree: int
    spectrum_lo: float
    spectrum_hi: float
    scale: float = 1.0
    on_apply: Callable[[], None] | None = None

    @property
    def _t0(self) -> float:
        return (self.spectrum_hi + self.spectrum_lo) / (self.spectrum_hi - self.spectrum_lo)

    @property
    def _isotropic(self) -> bool:
        return self.spectrum_hi - self.spectrum_lo <= 1e-12 * self.spectrum_hi

    @property
    def bounds(self) -> SpectralBounds:
        """Guaranteed bounds of the polynomial on ``range(base)``."""
        if self._isotropic:
            return SpectralBounds(self.scale, self.scale, 0)
        eps = 1.0 / math.cosh(self.degree * math.acosh(self._t0))
        return SpectralBounds(self.scale * (1 + eps), self.scale * (1 - eps), 0)

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return chebyshev_apply(self, v)


def chebyshev_degree(chi: float, target_chi: float = 4.0) -> int:
    """Smallest degree >= ceil(sqrt(chi)) whose polynomial has condition <= target."""
    if chi <= 1.0 + 1e-12:
        return 1
    k = max(1, math.ceil(math.sqrt(chi) * (1 - 1e-12)))
    t0 = (chi + 1) / (chi - 1)
    while True:
        eps = 1.0 / math.cosh(k * math.acosh(t0))
        if (1 + eps) / (1 - eps) <= target_chi:
            return k
        k += 1


def chebyshev_build(
    base,
    bounds: SpectralBounds,
    target_chi: float = 4.0,
    on_apply: Callable[[], None] | None = None,
) -> ChebyshevOperator:
    """Wrap ``base`` (matrix or callable) in a kernel-preserving Chebyshev polynomial.

    The degree is ``ceil(sqrt(chi))`` (at least 1), raised only if that is not
    enough to bring the condition number of the result down to ``target_chi``.
    """
    if target_chi <= 1.0:
        raise ValueError("target_chi must exceed 1")
    return ChebyshevOperator(
        base=_as_operator(base),
        degree=chebyshev_degree(bounds.chi, target_chi),
        spectrum_lo=bounds.lambda_min_plus,
        spectrum_hi=bounds.lambda_max,
        on_apply=on_apply,
    )


def chebyshev_apply(op: ChebyshevOperator, v: np.ndarray) -> np.ndarray:
    """Evaluate ``op.scale * P_K(base) @ v`` with exactly ``K`` calls to ``base``."""
    v = np.asarray(v, dtype=float)

    def base(u):
        if op.on_apply is not None:
            op.on_apply()
        out = op.base(u)
        if np.shape(out) != np.shape(u):
            raise DimensionMismatch(f"operator maps {np.shape(u)} to {np.shape(out)}")
        return out

    if op._isotropic:
        return (op.scale / op.spectrum_hi) * base(v)

    lo, hi = op.spectrum_lo, op.spectrum_hi
    t0 = op._t0
    c1 = 2.0 / (hi - lo)

    def shifted(u):
        # (hi + lo - 2 X) / (hi - lo) applied to u
        return t0 * u - c1 * base(u)

    # three-term recurrence on T_k(shifted) v and on the scalars T_k(t0)
    prev, cur = v, shifted(v)
    s_prev, s_cur = 1.0, t0
    for _ in range(op.degree - 1):
        prev, cur = cur, 2.0 * shifted(cur) - prev
        s_prev, s_cur = s_cur, 2.0 * t0 * s_cur - s_prev
    return op.scale * (v - cur / s_cur)
