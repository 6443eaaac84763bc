"""Dyadic data model, residual matrix and the two least-squares objectives.

All matrices are dense ``float64`` arrays.  A design with ``L`` regressors on
``N`` nodes is stored as one ``(L, N, N)`` array whose slices are symmetric
with zero diagonal.  Every sum over pairs ``i != j`` counts both orderings.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from numpy.typing import ArrayLike, NDArray

from eigdyad.errors import ContractViolation

if TYPE_CHECKING:
    from eigdyad.spectral import SpectralSummary

FloatArray = NDArray[np.float64]

MIN_NODES = 4


def _frozen(a: ArrayLike) -> FloatArray:
    arr = np.array(a, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


def _check_dyadic(mat: FloatArray, what: str) -> None:
    if not np.all(np.isfinite(mat)):
        raise ContractViolation(f"{what} has non-finite entries")
    if not np.array_equal(mat, np.swapaxes(mat, -1, -2)):
        raise ContractViolation(f"{what} is not symmetric")
    if np.any(np.diagonal(mat, axis1=-2, axis2=-1) != 0.0):
        raise ContractViolation(f"{what} has a non-zero diagonal")


def offdiag_ones(n: int) -> FloatArray:
    """The intercept regressor: ones off the diagonal, zeros on it."""
    return np.ones((n, n)) - np.eye(n)


@dataclass(frozen=True)
class DyadicDesign:
    """Regressor tensor of a fully observed undirected network.

    Attributes:
        x: ``(L, N, N)`` array; ``x[l]`` is the symmetric, zero-diagonal
            matrix of regressor ``l``.
        intercept: index of the regressor that is identically one off the
            diagonal, or ``None`` when the design has no intercept.
        names: one label per regressor.
    """

    x: FloatArray
    intercept: int | None = None
    names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        x = _frozen(self.x)
        if x.ndim == 2:
            x = _frozen(x[None, :, :])
        if x.ndim != 3 or x.shape[1] != x.shape[2]:
            raise ContractViolation(f"design must be (L, N, N), got shape {x.shape}")
        if x.shape[0] < 1:
            raise ContractViolation("design needs at least one regressor")
        if x.shape[1] < MIN_NODES:
            raise ContractViolation(f"design needs n >= {MIN_NODES} nodes, got {x.shape[1]}")
        _check_dyadic(x, "regressor tensor")
        if self.intercept is not None:
            if not 0 <= self.intercept < x.shape[0]:
                raise ContractViolation(f"intercept index {self.intercept} out of range")
            if not np.array_equal(x[self.intercept], offdiag_ones(x.shape[1])):
                raise ContractViolation("intercept regressor is not constant 1 off-diagonal")
        names = tuple(self.names) or tuple(f"x{l + 1}" for l in range(x.shape[0]))
        if len(names) != x.shape[0]:
            raise ContractViolation(f"{len(names)} names for {x.shape[0]} regressors")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "names", names)

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def l(self) -> int:  # noqa: E743
        return self.x.shape[0]

    @property
    def has_intercept_column(self) -> bool:
        return self.intercept is not None

    @property
    def slopes(self) -> list[int]:
        """Indices of the non-intercept regressors."""
        return [k for k in range(self.l) if k != self.intercept]

    def gram(self) -> FloatArray:
        """``sum_{i != j} X_ij X_ij'`` as an ``L x L`` matrix."""
        flat = self.x.reshape(self.l, -1)
        return flat @ flat.T

    def cross(self, mat: FloatArray) -> FloatArray:
        """``sum_{i != j} X_ij * mat_ij`` as an ``L`` vector."""
        return self.x.reshape(self.l, -1) @ np.asarray(mat, dtype=np.float64).ravel()

    def combine(self, coef: ArrayLike) -> FloatArray:
        """``sum_l coef_l X_l`` as an ``N x N`` matrix."""
        return np.tensordot(np.asarray(coef, dtype=np.float64), self.x, axes=1)

    @classmethod
    def from_matrices(
        cls, mats: list[ArrayLike], intercept: int | None = None, names: tuple[str, ...] = ()
    ) -> "DyadicDesign":
        return cls(np.stack([np.asarray(m, dtype=np.float64) for m in mats]), intercept, names)


@dataclass(frozen=True)
class OutcomeMatrix:
    """Symmetric, zero-diagonal matrix of outcomes ``Y_ij``."""

    y: FloatArray

    def __post_init__(self) -> None:
        y = _frozen(self.y)
        if y.ndim != 2 or y.shape[0] != y.shape[1]:
            raise ContractViolation(f"outcome must be square, got shape {y.shape}")
        _check_dyadic(y, "outcome matrix")
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True)
class ResidualMatrix:
    """``M(mu) = Y - sum_l mu_l X_l`` together with the ``mu`` it was built at."""

    m: FloatArray
    mu: FloatArray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        object.__setattr__(self, "m", _frozen(self.m))
        object.__setattr__(self, "mu", _frozen(self.mu))

    @property
    def n(self) -> int:
        return self.m.shape[0]


def as_param(mu: ArrayLike, l: int) -> FloatArray:  # noqa: E741
    """Validate a coefficient vector of length ``l``."""
    vec = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    if vec.ndim != 1 or vec.shape[0] != l:
        raise ContractViolation(f"coefficient vector must have length {l}, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise ContractViolation("coefficient vector has non-finite entries")
    return vec


def _check_pair(design: DyadicDesign, y: OutcomeMatrix) -> None:
    if design.n != y.n:
        raise ContractViolation(f"design has n={design.n} but outcome has n={y.n}")


def build_residual_matrix(design: DyadicDesign, y: OutcomeMatrix, mu: ArrayLike) -> ResidualMatrix:
    _check_pair(design, y)
    vec = as_param(mu, design.l)
    return ResidualMatrix(y.y - design.combine(vec), vec)


def _matrix(m: ResidualMatrix | ArrayLike) -> FloatArray:
    return m.m if isinstance(m, ResidualMatrix) else np.asarray(m, dtype=np.float64)


def objective_full(m: ResidualMatrix | ArrayLike) -> float:
    """OLS sum of squared residuals, ``Trace(M^2) = sum_{i != j} M_ij^2``."""
    mat = _matrix(m)
    return float(np.sum(mat * mat))


def objective_corrected(m: ResidualMatrix | ArrayLike, spec: "SpectralSummary") -> float:
    """Sum of squared eigenvalues of ``M`` with the largest-magnitude one removed.

    Summed directly from the spectrum rather than as ``Trace(M^2) - lambda^2``
    to avoid cancellation when the spike dominates.
    """
    mat = _matrix(m)
    eig = spec.eigenvalues
    if eig.shape[0] != mat.shape[0]:
        raise ContractViolation(
            f"spectral summary has {eig.shape[0]} eigenvalues for a {mat.shape[0]}x{mat.shape[0]} matrix"
        )
    return float(np.sum(np.delete(eig * eig, spec.leading_index)))
