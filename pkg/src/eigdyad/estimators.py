"""Point estimators for the dyadic regression with interacted effects.

The eigenvalue-corrected estimator minimizes the sum of squared eigenvalues
of ``M(mu)`` with the dominant one removed.  Its first-order condition is the
fixed point ``mu = f_N(mu)`` of a weighted least-squares map whose weights are
products ``nu_i nu_j`` of the dominant eigenvector of ``M(mu)``; see
:func:`f_n_iterate`.  Two routes to the minimizer are offered: plain
iteration (:func:`fixed_point`) and the two-iteration extrapolation
(:func:`two_step`) that removes the first-stage error using an estimate of the
linearization matrix ``K`` (:func:`k_hat`).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import brentq

from eigdyad.core import DyadicDesign, OutcomeMatrix, as_param, build_residual_matrix
from eigdyad.errors import ContractViolation, DegenerateEffectsError, DivergenceError, EstimationError
from eigdyad.spectral import SpectralSummary, eig_sym

log = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
Method = Literal["ols", "ols_adjusted", "single_iteration", "fixed_point", "two_step"]

RCOND_MIN = 1e-12
DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 500
DIVERGENCE_FACTOR = 1e3
MIN_SIGMA_U2 = 1e-10


@dataclass(frozen=True)
class KEstimate:
    """Plug-in estimate of the linearization matrix ``K`` and ``G = (I - K)^-1``."""

    k: FloatArray
    spectral_radius: float
    g: FloatArray
    q: float

    @property
    def contracting(self) -> bool:
        return self.spectral_radius < 1.0


@dataclass(frozen=True)
class InterceptAdjustment:
    """Moment-based correction of the OLS intercept for the shift ``-delta gamma^2``."""

    a_hat: float
    b_hat: float
    sigma_u2_hat: float
    gamma2_hat: float
    delta_tilde: int
    mu1_tilde: float
    mu_tilde: FloatArray


@dataclass(frozen=True)
class EstimateReport:
    """Outcome of one estimator run.

    ``trajectory`` holds every iterate starting from the first-stage value,
    so ``trajectory[-1] == mu_hat``.  ``spectral`` is the decomposition of
    ``M(mu_hat)`` and ``lambda_lead`` its largest-magnitude eigenvalue.
    """

    mu_hat: FloatArray
    method: Method
    iterations: int = 0
    trajectory: tuple[FloatArray, ...] = ()
    converged: bool = True
    final_step_norm: float = 0.0
    lambda_lead: float = float("nan")
    spectral: SpectralSummary | None = field(default=None, repr=False)
    k_estimate: KEstimate | None = None
    adjustment: InterceptAdjustment | None = None
    first_stage_spectral: SpectralSummary | None = field(default=None, repr=False)


def _solve(h: FloatArray, rhs: FloatArray, what: str) -> FloatArray:
    if not np.all(np.isfinite(h)):
        raise EstimationError(f"{what} has non-finite entries")
    cond = np.linalg.cond(h)
    if not np.isfinite(cond) or 1.0 / cond < RCOND_MIN:
        raise EstimationError(f"{what} is singular (condition number {cond:.3e})")
    return np.linalg.solve(h, rhs)


def _check_pair(design: DyadicDesign, y: OutcomeMatrix) -> None:
    if design.n != y.n:
        raise ContractViolation(f"design has n={design.n} but outcome has n={y.n}")


# --- OLS and the intercept adjustment --------------------------------------


def ols_dyadic(design: DyadicDesign, y: OutcomeMatrix) -> EstimateReport:
    """Least squares over all ordered dyads ``i != j``."""
    _check_pair(design, y)
    mu = _solve(design.gram(), design.cross(y.y), "dyadic Gram matrix")
    return EstimateReport(mu, "ols", trajectory=(mu,))


def solve_depressed_cubic(a: float, abs_b: float) -> float:
    """Unique real root of ``x^3 + 3 a x - |b|`` for ``a >= 0``.

    The polynomial is increasing, negative at 0 and non-negative at
    ``|b|^(1/3)``, so a bracketing solver on ``[0, max(1, |b|^(1/3) + sqrt(3a))]``
    converges to the root.
    """
    if a < 0 or abs_b < 0:
        raise ContractViolation(f"need a >= 0 and |b| >= 0, got a={a}, |b|={abs_b}")
    if abs_b == 0.0:
        return 0.0
    def poly(x: float) -> float:
        return x**3 + 3.0 * a * x - abs_b

    hi = max(1.0, abs_b ** (1.0 / 3.0) + np.sqrt(3.0 * a))
    while poly(hi) < 0.0:  # rounding in the cube root can leave the bracket a hair short
        hi *= 1.0 + 1e-8
    if poly(hi) == 0.0:
        return float(hi)
    return float(brentq(poly, 0.0, hi, xtol=1e-12, rtol=4 * np.finfo(float).eps))


def triple_moments(eps: FloatArray) -> tuple[float, float]:
    """``(a_hat, b_hat)``: sums over distinct triples of ``e_ij e_ik`` and ``e_ij e_ik e_jk``, over ``N^3``.

    ``eps`` must have a zero diagonal, which removes every term with a
    repeated index from the closed forms.
    """
    n = eps.shape[0]
    rows = eps.sum(axis=1)
    a = float(np.sum(rows * rows) - np.sum(eps * eps)) / n**3
    b = float(np.sum(eps * (eps @ eps))) / n**3
    return a, b


def adjust_intercept(design: DyadicDesign, y: OutcomeMatrix, beta_tilde: ArrayLike) -> InterceptAdjustment:
    """Shift the OLS intercept to the intercept of the reparameterized model.

    Raises:
        ContractViolation: the design has no intercept column.
        DegenerateEffectsError: the estimated effect variance is ~0.
    """
    _check_pair(design, y)
    if design.intercept is None:
        raise ContractViolation("intercept adjustment needs a design with an intercept column")
    beta = as_param(beta_tilde, design.l)
    eps = y.y - design.combine(beta)
    a_hat, b_hat = triple_moments(eps)
    delta = 1 if b_hat >= 0 else -1
    a_pos = max(a_hat, 0.0)
    sigma_u2 = solve_depressed_cubic(a_pos, abs(b_hat))
    if sigma_u2 < MIN_SIGMA_U2:
        raise DegenerateEffectsError(f"estimated effect variance {sigma_u2:.3e} is too small to adjust the intercept")
    gamma2 = a_pos / sigma_u2
    mu = beta.copy()
    mu[design.intercept] -= delta * gamma2
    return InterceptAdjustment(a_hat, b_hat, sigma_u2, gamma2, delta, float(mu[design.intercept]), mu)


def ols_adjusted(design: DyadicDesign, y: OutcomeMatrix) -> EstimateReport:
    """OLS slopes with the adjusted intercept: the default first stage.

    Designs without an intercept column are returned as plain OLS.
    """
    ols = ols_dyadic(design, y)
    if design.intercept is None:
        return replace(ols, method="ols_adjusted")
    adj = adjust_intercept(design, y, ols.mu_hat)
    return EstimateReport(adj.mu_tilde, "ols_adjusted", trajectory=(adj.mu_tilde,), adjustment=adj)


# --- the fixed-point map ----------------------------------------------------


def _weighted_system(
    design: DyadicDesign, y: OutcomeMatrix, nu: FloatArray, coincident_terms: bool = False
) -> tuple[FloatArray, FloatArray]:
    """Normal equations of the corrected least squares for a fixed ``nu``.

    The eigenvector terms run over ``i != j`` and ``k`` distinct from both;
    with zero diagonals that is the full ``i, j, k`` sum minus its ``i == j``
    part, assembled from ``w_k = sum_i nu_i X_ik`` in ``O(N^2 L^2)``.

    ``coincident_terms=True`` keeps the ``i == j`` part.  The fixed points are
    then exactly the stationary points of the eigenvalue objective; the
    default ranges differ from it by ``O(1/N)`` when ``E(U) E(U^3) != 0``.
    """
    x = design.x
    l = design.l
    w = x @ nu                               # (L, N): sum_i nu_i X_ik
    z = y.y @ nu
    weighted_xx = w @ w.T
    weighted_xy = w @ z
    if not coincident_terms:
        xs = (x * nu[None, :, None]).reshape(l, -1)
        ys = (y.y * nu[:, None]).ravel()
        weighted_xx = weighted_xx - xs @ xs.T
        weighted_xy = weighted_xy - xs @ ys
    h = design.gram() - weighted_xx
    rhs = design.cross(y.y) - weighted_xy
    return h, rhs


def f_n_from_nu(design: DyadicDesign, y: OutcomeMatrix, nu: ArrayLike, coincident_terms: bool = False) -> FloatArray:
    """Weighted least squares step for a given unit vector ``nu``."""
    h, rhs = _weighted_system(design, y, np.asarray(nu, dtype=np.float64), coincident_terms)
    return _solve(h, rhs, "eigenvector-weighted Gram matrix")


def f_n_step(
    design: DyadicDesign, y: OutcomeMatrix, mu: ArrayLike, coincident_terms: bool = False
) -> tuple[FloatArray, SpectralSummary]:
    """``f_N(mu)`` together with the decomposition of ``M(mu)`` it used."""
    _check_pair(design, y)
    spec = eig_sym(build_residual_matrix(design, y, mu).m)
    return f_n_from_nu(design, y, spec.nu, coincident_terms), spec


def f_n_iterate(design: DyadicDesign, y: OutcomeMatrix, mu: ArrayLike) -> FloatArray:
    """One application of the fixed-point map ``f_N``."""
    return f_n_step(design, y, mu)[0]


def _first_stage(design: DyadicDesign, y: OutcomeMatrix, mu_start: ArrayLike | None) -> FloatArray:
    if mu_start is None:
        return ols_adjusted(design, y).mu_hat
    return as_param(mu_start, design.l)


def single_iteration(design: DyadicDesign, y: OutcomeMatrix, mu_tilde: ArrayLike | None = None) -> EstimateReport:
    """``f_N`` applied once to the first stage (OLS with adjusted intercept by default)."""
    start = _first_stage(design, y, mu_tilde)
    mu, first = f_n_step(design, y, start)
    spec = eig_sym(build_residual_matrix(design, y, mu).m)
    return EstimateReport(
        mu,
        "single_iteration",
        iterations=1,
        trajectory=(start, mu),
        final_step_norm=float(np.max(np.abs(mu - start))),
        lambda_lead=spec.lead,
        spectral=spec,
        first_stage_spectral=first,
    )


def fixed_point(
    design: DyadicDesign,
    y: OutcomeMatrix,
    mu_start: ArrayLike | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    coincident_terms: bool = False,
) -> EstimateReport:
    """Iterate ``mu <- f_N(mu)`` until the sup-norm step is below ``tol * (1 + |mu|)``.

    ``coincident_terms`` is passed to :func:`f_n_step`.

    Raises:
        DivergenceError: an iterate moved more than ``1e3 * (1 + |mu_start|)``
            away from the start.
    """
    start = _first_stage(design, y, mu_start)
    radius = DIVERGENCE_FACTOR * (1.0 + float(np.linalg.norm(start)))
    traj = [start]
    mu = start
    first = None
    step = float("inf")
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new, spec = f_n_step(design, y, mu, coincident_terms)
        if first is None:
            first = spec
        step = float(np.max(np.abs(new - mu)))
        traj.append(new)
        if not np.all(np.isfinite(new)) or float(np.linalg.norm(new - start)) > radius:
            raise DivergenceError(f"fixed-point iteration diverged at step {it} (|mu - mu_start| > {radius:.3e})")
        done = step <= tol * (1.0 + float(np.max(np.abs(mu))))
        mu = new
        if done:
            converged = True
            break
    if not converged:
        log.warning("fixed point not reached after %d iterations (last step %.3e)", max_iter, step)
    spec = eig_sym(build_residual_matrix(design, y, mu).m)
    return EstimateReport(
        mu,
        "fixed_point",
        iterations=it,
        trajectory=tuple(traj),
        converged=converged,
        final_step_norm=step,
        lambda_lead=spec.lead,
        spectral=spec,
        first_stage_spectral=first,
    )


# --- K estimate and the two-step estimator ----------------------------------


def subsample_moments(design: DyadicDesign) -> tuple[FloatArray, FloatArray, FloatArray]:
    """Moments from disjoint pairs and disjoint paths of nodes.

    Returns ``(E[X12 X12'], E[X12 X23'], E[X12])`` estimated on the pairs
    ``(2k, 2k+1)`` and the paths ``(3k, 3k+1, 3k+2)`` (0-based), which share
    no node and are therefore independent summands.
    """
    x = design.x
    n = design.n
    p = np.arange(n // 2)
    pairs = x[:, 2 * p, 2 * p + 1]                # (L, n // 2)
    t = np.arange(n // 3)
    first = x[:, 3 * t, 3 * t + 1]
    second = x[:, 3 * t + 1, 3 * t + 2]
    return pairs @ pairs.T / p.size, first @ second.T / t.size, pairs.mean(axis=1)


def k_hat(design: DyadicDesign, nu: ArrayLike) -> KEstimate:
    """Plug-in estimate of ``K`` from the dominant eigenvector at a first stage.

    A spectral radius at or above one is recorded, logged and returned; only a
    singular inner matrix or ``I - K`` is fatal.
    """
    if design.n < 6:
        raise ContractViolation(f"k_hat needs n >= 6, got {design.n}")
    v = np.asarray(nu, dtype=np.float64)
    if v.shape != (design.n,):
        raise ContractViolation(f"nu must have length {design.n}")
    q = float(np.sum(v)) ** 2 / design.n
    xx, path, mean = subsample_moments(design)
    inner = xx - q * path
    k = q * _solve(inner, path - q * np.outer(mean, mean), "K inner matrix")
    radius = float(np.max(np.abs(np.linalg.eigvals(k))))
    if radius >= 1.0:
        log.warning("estimated K has spectral radius %.4f >= 1", radius)
    eye = np.eye(design.l)
    g = _solve(eye - k, eye, "I - K")
    return KEstimate(k, radius, g, q)


def two_step(
    design: DyadicDesign,
    y: OutcomeMatrix,
    mu_tilde: ArrayLike | None = None,
    k: KEstimate | None = None,
) -> EstimateReport:
    """Two iterations of ``f_N`` with the ``G = (I - K)^-1`` extrapolation.

    ``trajectory`` is ``(mu_tilde, mu_hat_1, mu_check_1, mu_hat_2, mu_check_2)``.
    Passing ``k`` overrides the plug-in estimate.
    """
    start = _first_stage(design, y, mu_tilde)
    mu1, first = f_n_step(design, y, start)
    kest = k if k is not None else k_hat(design, first.nu)
    g = kest.g
    eye = np.eye(design.l)
    check1 = g @ mu1 + (eye - g) @ start
    mu2, _ = f_n_step(design, y, check1)
    check2 = g @ mu2 + (eye - g) @ check1
    spec = eig_sym(build_residual_matrix(design, y, check2).m)
    return EstimateReport(
        check2,
        "two_step",
        iterations=2,
        trajectory=(start, mu1, check1, mu2, check2),
        final_step_norm=float(np.max(np.abs(check2 - check1))),
        lambda_lead=spec.lead,
        spectral=spec,
        k_estimate=kest,
        first_stage_spectral=first,
    )


def estimate(design: DyadicDesign, y: OutcomeMatrix, method: str = "two_step", **kw) -> EstimateReport:
    """Dispatch by estimator name."""
    table = {
        "ols": ols_dyadic,
        "ols_adjusted": ols_adjusted,
        "single_iteration": single_iteration,
        "fixed_point": fixed_point,
        "two_step": two_step,
    }
    if method not in table:
        raise ContractViolation(f"unknown estimator {method!r}; choose from {sorted(table)}")
    return table[method](design, y, **kw)
