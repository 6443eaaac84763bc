"""Symmetric eigendecomposition and random-matrix diagnostics.

The residual matrix of the dyadic model is a rank-one spike plus Wigner-type
noise, so this module also carries the semicircle law, the interlacing check
for positive rank-one updates and the three-term expansion of the spike.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray
from scipy import stats

from eigdyad.errors import ContractViolation, NumericalError

FloatArray = NDArray[np.float64]

SYMMETRY_RTOL = 1e-10
TIE_TOL = 1e-12


def fix_sign(vec: ArrayLike) -> FloatArray:
    """Orient ``vec`` so its entries sum to a non-negative number.

    An exactly zero sum falls back to making the first non-zero entry
    positive.  Idempotent.
    """
    v = np.array(vec, dtype=np.float64, copy=True)
    total = float(np.sum(v))
    if total < 0.0:
        return -v
    if total == 0.0:
        nz = np.flatnonzero(v)
        if nz.size and v[nz[0]] < 0.0:
            return -v
    return v


@dataclass(frozen=True)
class SpectralSummary:
    """Sorted spectrum of a symmetric matrix plus its dominant eigenvector.

    Attributes:
        eigenvalues: all eigenvalues, descending.
        leading_index: position in ``eigenvalues`` of the largest ``|lambda|``.
        nu: unit eigenvector of that eigenvalue, sign fixed by :func:`fix_sign`.
        sign_fixed: whether the orientation convention was applied.
        tie: ``|lambda_1| == |lambda_N|`` up to ``TIE_TOL`` (positive one kept).
    """

    eigenvalues: FloatArray
    leading_index: int
    nu: FloatArray
    sign_fixed: bool = True
    tie: bool = False

    @property
    def lead(self) -> float:
        return float(self.eigenvalues[self.leading_index])

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[0]


def _as_symmetric(m: ArrayLike) -> FloatArray:
    mat = np.asarray(getattr(m, "m", m), dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ContractViolation(f"expected a square matrix, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ContractViolation("matrix has non-finite entries")
    scale = 1.0 + float(np.max(np.abs(mat), initial=0.0))
    if float(np.max(np.abs(mat - mat.T), initial=0.0)) > SYMMETRY_RTOL * scale:
        raise ContractViolation("matrix is not symmetric")
    return mat


def _decompose(mat: FloatArray, vectors: bool):
    try:
        return scipy.linalg.eigh(mat, eigvals_only=not vectors, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError) as exc:
        fro = float(np.linalg.norm(mat))
        raise NumericalError(
            f"symmetric eigensolver failed on {mat.shape[0]}x{mat.shape[0]} matrix "
            f"(Frobenius norm {fro:.3e}, max |entry| {np.max(np.abs(mat)):.3e}): {exc}"
        ) from exc


def _leading_position(eig_desc: FloatArray) -> tuple[int, bool]:
    top, bottom = eig_desc[0], eig_desc[-1]
    scale = max(abs(top), abs(bottom), 1.0)
    if abs(abs(top) - abs(bottom)) <= TIE_TOL * scale and eig_desc.size > 1 and top != bottom:
        return 0, True
    if abs(bottom) > abs(top):
        return eig_desc.size - 1, False
    return 0, False


def eig_sym(m: ArrayLike) -> SpectralSummary:
    """Full dense decomposition of a symmetric matrix.

    Raises:
        ContractViolation: the input is not symmetric.
        NumericalError: the eigensolver did not converge.
    """
    mat = _as_symmetric(m)
    w, vecs = _decompose(mat, vectors=True)
    w_desc = w[::-1].copy()
    pos, tie = _leading_position(w_desc)
    nu = fix_sign(vecs[:, w.size - 1 - pos])
    nu /= np.linalg.norm(nu)
    return SpectralSummary(w_desc, pos, nu, True, tie)


def eigenvalues_sym(m: ArrayLike) -> FloatArray:
    """Descending eigenvalues only (cheaper when no vectors are needed)."""
    return _decompose(_as_symmetric(m), vectors=False)[::-1].copy()


def leading_abs_eigenpair(m: ArrayLike) -> tuple[float, FloatArray, bool]:
    """Eigenvalue of largest magnitude, its sign-fixed unit vector and the tie flag."""
    spec = eig_sym(m)
    return spec.lead, spec.nu, spec.tie


def residual_norms(m: ArrayLike, spec: SpectralSummary) -> float:
    """``||M nu - lambda nu||_2`` for the leading pair."""
    mat = np.asarray(getattr(m, "m", m), dtype=np.float64)
    return float(np.linalg.norm(mat @ spec.nu - spec.lead * spec.nu))


# --- semicircle law -------------------------------------------------------


@dataclass(frozen=True)
class SemicircleSpec:
    """Semicircle law for entries of variance ``sigma**2`` after ``1/sqrt(N)`` scaling."""

    sigma: float = 1.0

    def __post_init__(self) -> None:
        if not self.sigma > 0.0:
            raise ContractViolation(f"sigma must be positive, got {self.sigma}")

    @property
    def radius(self) -> float:
        return 2.0 * self.sigma


def semicircle_pdf(x: ArrayLike, spec: SemicircleSpec = SemicircleSpec()) -> FloatArray | float:
    xs = np.asarray(x, dtype=np.float64)
    s2 = spec.sigma**2
    inside = np.clip(4.0 * s2 - xs * xs, 0.0, None)
    out = np.where(np.abs(xs) <= spec.radius, np.sqrt(inside) / (2.0 * np.pi * s2), 0.0)
    return float(out) if out.ndim == 0 else out


def semicircle_cdf(x: ArrayLike, spec: SemicircleSpec = SemicircleSpec()) -> FloatArray | float:
    t = np.clip(np.asarray(x, dtype=np.float64) / spec.radius, -1.0, 1.0)
    out = 0.5 + (t * np.sqrt(1.0 - t * t) + np.arcsin(t)) / np.pi
    return float(out) if out.ndim == 0 else out


def semicircle_distance(eigenvalues: ArrayLike, spec: SemicircleSpec = SemicircleSpec()) -> float:
    """Kolmogorov-Smirnov distance between the empirical spectrum and the law.

    ``eigenvalues`` must already be divided by ``sqrt(N)``.
    """
    vals = np.asarray(eigenvalues, dtype=np.float64).ravel()
    if vals.size == 0:
        raise ContractViolation("semicircle_distance needs at least one eigenvalue")
    return float(stats.kstest(vals, lambda z: semicircle_cdf(z, spec)).statistic)


# --- rank-one perturbation --------------------------------------------------


@dataclass(frozen=True)
class InterlacingCheck:
    holds: bool
    max_violation: float
    tolerance: float


def check_interlacing(eigs_base: ArrayLike, eigs_spiked: ArrayLike) -> InterlacingCheck:
    """Check ``lambda_i(V) <= lambda_i(V + uu') <= lambda_{i-1}(V)``.

    Both inputs sorted descending.  ``max_violation`` is the largest signed
    amount by which any inequality fails (negative when all hold strictly).
    """
    base = np.asarray(eigs_base, dtype=np.float64)
    spiked = np.asarray(eigs_spiked, dtype=np.float64)
    if base.shape != spiked.shape or base.ndim != 1:
        raise ContractViolation(f"spectra shapes differ: {base.shape} vs {spiked.shape}")
    if base.size == 0:
        raise ContractViolation("empty spectra")
    lower = base - spiked
    upper = spiked[1:] - base[:-1]
    worst = float(max(lower.max(), upper.max(initial=-np.inf)))
    tol = 1e-8 * (1.0 + float(max(np.abs(base).max(), np.abs(spiked).max())))
    return InterlacingCheck(worst <= tol, worst, tol)


def spike_expansion_oracle(u: ArrayLike, v_matrix: ArrayLike, mean_u_sq: float = 0.0) -> float:
    """Three-term approximation of the top eigenvalue of ``uu' + V - E(U)^2 I``.

    ``v_matrix`` is the full noise matrix including its diagonal
    ``E(U)^2 - U_i^2`` (see :meth:`eigdyad.dgp.SimTruth.spike_noise`), so that
    ``uu' + v_matrix - mean_u_sq * I`` has a zero diagonal.  ``mean_u_sq`` is
    the squared population mean ``E(U)^2``.  Simulation-only diagnostic.
    """
    uv = np.asarray(u, dtype=np.float64)
    v = np.asarray(v_matrix, dtype=np.float64)
    norm2 = float(uv @ uv)
    if norm2 == 0.0:
        raise ContractViolation("u must be non-zero")
    vu = v @ uv
    return norm2 + float(uv @ vu) / norm2 + float(vu @ vu) / norm2**2 - mean_u_sq


def export_spectrum(eigenvalues: ArrayLike, path: str | Path) -> Path:
    """Write one eigenvalue per line under the header ``eigenvalue``."""
    out = Path(path)
    with out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["eigenvalue"])
        for val in np.asarray(eigenvalues, dtype=np.float64).ravel():
            writer.writerow([f"{val:.17g}"])
    return out
