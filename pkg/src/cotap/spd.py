"""Eigendecomposition-based calculus on symmetric positive definite matrices.

Stiffness and compliance matrices live on the SPD manifold. Blending two
stiffness settings by straight linear interpolation can inflate the
determinant (the swelling effect) or, with extrapolation, leave the manifold
entirely; interpolating in the matrix-log domain avoids both, which is why
every stiffness blend in this package goes through :func:`spd_log` /
:func:`spd_exp`.

All matrices involved are small (at most 11x11), so each map is computed
through a symmetric eigendecomposition rather than Pade or scaling-squaring
schemes: the eigenbasis gives log, exp and sqrt for the price of one
factorization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NotPositiveDefinite, ZeroMatrix

# Absolute eigenvalue floor for SPD admission. Below it we reject rather than
# silently regularize: callers decide recovery (see regularize_alpha).
EPS_SPD = 1e-8

# Singular values below this count as numerically rank deficient; the
# condition number then collapses to the +inf sentinel.
EPS_SV = 1e-12

# Relative Frobenius tolerance for accepting a matrix as symmetric.
SYMMETRY_RTOL = 1e-10

UNIT_TAGS = (
    "stiffness_translational",  # N/m
    "stiffness_rotational",     # Nm/rad
    "compliance",               # m/N or rad/Nm
    "dimensionless",
)


def _symmetric_part(entries, what: str = "matrix") -> np.ndarray:
    """Validate symmetry to SYMMETRY_RTOL and return the symmetrized copy."""
    a = np.array(entries, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"{what}: expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{what}: entries must be finite")
    scale = max(float(np.linalg.norm(a)), 1.0)
    if float(np.linalg.norm(a - a.T)) > SYMMETRY_RTOL * scale:
        raise ValueError(f"{what}: not symmetric within relative tolerance {SYMMETRY_RTOL}")
    return 0.5 * (a + a.T)


@dataclass(frozen=True)
class SpdMatrix:
    """A symmetric positive definite matrix carrying a physical unit tag.

    Construction is the SPD admission test: symmetry within 1e-10 relative
    tolerance and smallest eigenvalue above ``EPS_SPD``, else
    :class:`NotPositiveDefinite`. The entry array is copied and frozen, so
    instances are value-semantic and safe to share between threads.

    Parameters
    ----------
    entries : array_like, shape (n, n)
        Matrix entries.
    unit : str
        One of ``UNIT_TAGS``.
    """

    entries: np.ndarray
    unit: str = "dimensionless"

    def __post_init__(self):
        if self.unit not in UNIT_TAGS:
            raise ValueError(f"unknown unit tag {self.unit!r}; expected one of {UNIT_TAGS}")
        a = _symmetric_part(self.entries, "SpdMatrix")
        w = np.linalg.eigvalsh(a)
        if w[0] <= EPS_SPD:
            raise NotPositiveDefinite(
                f"smallest eigenvalue {w[0]:.3e} is at or below the {EPS_SPD:g} floor"
            )
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def from_diag(cls, values, unit: str = "dimensionless") -> "SpdMatrix":
        return cls(np.diag(np.asarray(values, dtype=float)), unit)

    @classmethod
    def identity(cls, dim: int, unit: str = "dimensionless") -> "SpdMatrix":
        return cls(np.eye(dim), unit)


@dataclass(frozen=True)
class ModulationRatio:
    """Raw and condition-number-processed blend ratio.

    ``processed_alpha`` never exceeds ``raw_alpha``; both stay in [0, 1].
    """

    raw_alpha: float
    processed_alpha: float

    def __post_init__(self):
        if not 0.0 <= self.raw_alpha <= 1.0:
            raise ValueError(f"raw_alpha {self.raw_alpha} outside [0, 1]")
        if not 0.0 <= self.processed_alpha <= self.raw_alpha:
            raise ValueError(
                f"processed_alpha {self.processed_alpha} outside [0, raw_alpha]"
            )


def _as_entries(K) -> np.ndarray:
    return K.entries if isinstance(K, SpdMatrix) else np.asarray(K, dtype=float)


def _eig_apply(a: np.ndarray, fn) -> np.ndarray:
    """Apply a scalar function to the eigenvalues of a symmetric matrix."""
    w, v = np.linalg.eigh(a)
    out = (v * fn(w)) @ v.T
    return 0.5 * (out + out.T)


def spd_log(K) -> np.ndarray:
    """Matrix logarithm of an SPD matrix.

    Parameters
    ----------
    K : SpdMatrix or array_like, shape (n, n)
        SPD matrix; raw arrays are admitted through the same symmetry and
        eigenvalue checks as :class:`SpdMatrix`.

    Returns
    -------
    ndarray, shape (n, n)
        Symmetric matrix ``log K``; ``spd_exp`` inverts it.
    """
    a = _symmetric_part(_as_entries(K), "spd_log")
    w, v = np.linalg.eigh(a)
    if w[0] <= EPS_SPD:
        raise NotPositiveDefinite(
            f"spd_log: smallest eigenvalue {w[0]:.3e} at or below the {EPS_SPD:g} floor"
        )
    out = (v * np.log(w)) @ v.T
    return 0.5 * (out + out.T)


def spd_exp(S, unit: str = "dimensionless") -> SpdMatrix:
    """Matrix exponential of a symmetric matrix, landing on the SPD manifold.

    Eigenvalues are exponentiated elementwise, so the result is positive
    definite by construction (it can still fail admission if an eigenvalue of
    ``S`` is below ``log(EPS_SPD)``, i.e. the result would be softer than the
    SPD floor allows).
    """
    a = _symmetric_part(S, "spd_exp")
    return SpdMatrix(_eig_apply(a, np.exp), unit)


def sqrt_spd(K, unit: str = "dimensionless") -> SpdMatrix:
    """Principal matrix square root of an SPD matrix."""
    a = _symmetric_part(_as_entries(K), "sqrt_spd")
    w, v = np.linalg.eigh(a)
    if w[0] <= EPS_SPD:
        raise NotPositiveDefinite(
            f"sqrt_spd: smallest eigenvalue {w[0]:.3e} at or below the {EPS_SPD:g} floor"
        )
    out = (v * np.sqrt(w)) @ v.T
    return SpdMatrix(0.5 * (out + out.T), unit)


def spd_inverse(K, unit: str = "dimensionless") -> SpdMatrix:
    """Inverse of an SPD matrix through its eigenbasis.

    The caller names the unit of the result (stiffness and compliance are
    dual, so the tag flips in a context-dependent way).
    """
    a = _symmetric_part(_as_entries(K), "spd_inverse")
    w, v = np.linalg.eigh(a)
    if w[0] <= EPS_SPD:
        raise NotPositiveDefinite(
            f"spd_inverse: smallest eigenvalue {w[0]:.3e} at or below the {EPS_SPD:g} floor"
        )
    out = (v * (1.0 / w)) @ v.T
    return SpdMatrix(0.5 * (out + out.T), unit)


def log_euclidean_interpolate(A: SpdMatrix, B: SpdMatrix, alpha: float) -> SpdMatrix:
    """Log-Euclidean interpolation ``exp(alpha log A + (1 - alpha) log B)``.

    ``alpha = 1`` returns ``A`` and ``alpha = 0`` returns ``B`` exactly (the
    endpoints are special-cased, which also makes a zero processed ratio
    degrade bit-exactly to the PD baseline downstream). The interpolant is
    SPD for every ``alpha`` in [0, 1] and its log-determinant is the linear
    blend of the endpoints' log-determinants, so there is no swelling.
    """
    if not isinstance(A, SpdMatrix) or not isinstance(B, SpdMatrix):
        raise TypeError("log_euclidean_interpolate expects SpdMatrix operands")
    if A.dim != B.dim:
        raise DimensionMismatch(f"dimension mismatch: {A.dim} vs {B.dim}")
    if A.unit != B.unit:
        raise DimensionMismatch(f"unit mismatch: {A.unit!r} vs {B.unit!r}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    if alpha == 1.0:
        return A
    if alpha == 0.0:
        return B
    blended = alpha * spd_log(A) + (1.0 - alpha) * spd_log(B)
    return spd_exp(blended, unit=A.unit)


def condition_number(M) -> float:
    """Ratio of extreme singular values of a (possibly rectangular) matrix.

    Returns ``math.inf`` when the smallest singular value drops below
    ``EPS_SV``, so downstream ratio processing collapses cleanly to zero
    instead of dividing by a huge float.
    """
    a = np.asarray(M, dtype=float)
    if a.ndim != 2:
        raise DimensionMismatch(f"condition_number: expected a 2-D matrix, got shape {a.shape}")
    if not np.any(a):
        raise ZeroMatrix("condition_number: matrix is identically zero")
    s = np.linalg.svd(a, compute_uv=False)
    if s[-1] < EPS_SV:
        return math.inf
    return float(s[0] / s[-1])


def regularize_alpha(alpha: float, cond_num: float) -> ModulationRatio:
    """Shrink the blend ratio near kinematic singularities.

    ``alpha_hat = alpha / (1 + max(0, cond_num - 10))``; an infinite
    condition number maps to exactly zero. Monotone non-increasing in the
    condition number and non-decreasing in ``alpha``.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha {alpha} outside [0, 1]")
    if not (cond_num >= 1.0):
        raise ValueError(f"condition number {cond_num} must be >= 1")
    if math.isinf(cond_num):
        return ModulationRatio(alpha, 0.0)
    processed = alpha / (1.0 + max(0.0, cond_num - 10.0))
    return ModulationRatio(alpha, processed)
