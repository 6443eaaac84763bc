"""Effect recovery, bias correction and variance estimation.

The dominant eigenpair of ``M(mu)`` at a consistent ``mu`` recovers the
effects up to scale, which gives the moments of ``U`` entering the bias and
the asymptotic covariance of ``N (mu_hat - mu0)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.stats import norm

from eigdyad.core import DyadicDesign, OutcomeMatrix, build_residual_matrix, offdiag_ones
from eigdyad.errors import ContractViolation, EstimationError
from eigdyad.estimators import EstimateReport, KEstimate, k_hat, _solve
from eigdyad.spectral import SpectralSummary, eig_sym, fix_sign

log = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]

SIGMA_V2_FLOOR = 1e-8
ASYMMETRY_TOL = 1e-8


@dataclass(frozen=True)
class EffectRecovery:
    """Recovered effects ``U_hat`` and their first three sample moments."""

    delta_hat: int
    u_hat: FloatArray
    m1: float
    m2: float
    m3: float
    tie: bool = False

    @property
    def n(self) -> int:
        return self.u_hat.shape[0]

    @property
    def q(self) -> float:
        """``m1^2 / m2``, the plug-in for ``E(U)^2 / E(U^2)``; lies in [0, 1]."""
        return self.m1**2 / self.m2 if self.m2 > 0 else 0.0


@dataclass(frozen=True)
class CrossMoments:
    """Full-sample regressor moments over ordered pairs and ordered paths."""

    xx: FloatArray
    x_path: FloatArray
    x_mean: FloatArray


@dataclass(frozen=True)
class InferenceReport:
    """Bias, noise variance, covariance and intervals for one estimate.

    ``covariance`` is the asymptotic covariance of ``N (mu_hat - mu0)``;
    ``std_errors`` are on the scale of ``mu_hat``.  ``sigma_v2`` is the raw
    estimate, possibly negative, in which case ``sigma_v2_degenerate`` is set
    and the covariance was built with a floor of ``1e-8``.
    """

    estimate: FloatArray
    debiased: FloatArray
    bias: FloatArray
    sigma_eps2: float
    sigma_v2: float
    sigma_v2_degenerate: bool
    covariance: FloatArray
    std_errors: FloatArray
    ci_lower: FloatArray
    ci_upper: FloatArray
    level: float
    n: int
    effects: EffectRecovery
    k: KEstimate
    moments: CrossMoments
    first_stage_effects: EffectRecovery | None = field(default=None, repr=False)

    def covers(self, truth: FloatArray) -> NDArray[np.bool_]:
        t = np.asarray(truth, dtype=np.float64)
        return (self.ci_lower <= t) & (t <= self.ci_upper)

    def to_dict(self, names: tuple[str, ...] = ()) -> dict:
        labels = list(names) or [f"x{l + 1}" for l in range(self.estimate.size)]
        return {
            "n": self.n,
            "level": self.level,
            "coefficients": labels,
            "estimate": self.estimate.tolist(),
            "debiased": self.debiased.tolist(),
            "bias": self.bias.tolist(),
            "std_errors": self.std_errors.tolist(),
            "ci_lower": self.ci_lower.tolist(),
            "ci_upper": self.ci_upper.tolist(),
            "covariance": self.covariance.tolist(),
            "sigma_eps2": self.sigma_eps2,
            "sigma_v2": self.sigma_v2,
            "sigma_v2_degenerate": self.sigma_v2_degenerate,
            "delta_hat": self.effects.delta_hat,
            "u_moments": [self.effects.m1, self.effects.m2, self.effects.m3],
            "k_hat": self.k.k.tolist(),
            "k_spectral_radius": self.k.spectral_radius,
        }


def recover_effects(spec: SpectralSummary) -> EffectRecovery:
    """``delta_hat`` and ``U_hat`` from the dominant eigenpair of ``M(mu_tilde)``.

    ``delta_hat`` is the sign of the largest-magnitude eigenvalue.  ``U_hat``
    is ``sqrt(|lambda|)`` times the eigenvector oriented so that
    ``sum(U_hat) >= 0``, matching the normalization ``E(U) >= 0``.
    """
    lam = spec.lead
    delta = 1 if lam >= 0 else -1
    u = np.sqrt(abs(lam)) * fix_sign(spec.nu)
    return EffectRecovery(delta, u, float(np.mean(u)), float(np.mean(u**2)), float(np.mean(u**3)), spec.tie)


def cross_moments(design: DyadicDesign) -> CrossMoments:
    """Sample means of ``X_ij X_ij'``, ``X_ij X_jk'`` and ``X_ij`` over distinct indices."""
    n, l = design.n, design.l
    flat = design.x.reshape(l, -1)
    pairs = n * (n - 1)
    sq = flat @ flat.T
    rows = design.x.sum(axis=1)                    # (L, N): sum_i X_ij
    path = (rows @ rows.T - sq) / (pairs * (n - 2))
    return CrossMoments(sq / pairs, 0.5 * (path + path.T), flat.sum(axis=1) / pairs)


def _inner(effects: EffectRecovery, cm: CrossMoments) -> FloatArray:
    return cm.xx - effects.q * cm.x_path


def bias_estimate(
    effects: EffectRecovery, k: KEstimate, cm: CrossMoments, sigma_v2_hat: float | None = None
) -> FloatArray:
    """Plug-in asymptotic bias of ``N (mu_hat - mu0)``.

    ``2 delta m1 m3 / m2 * (I - K)^-1 (xx - q x_path)^-1 x_mean``.  Passing
    ``sigma_v2_hat`` replaces ``m3`` by ``m3 + sigma_v2 m1 / m2``, the limit
    obtained when the noise contribution to the spike is carried through;
    off by default.
    """
    if not effects.m2 > 1e-10:
        raise ContractViolation(f"second moment of recovered effects too small ({effects.m2:.3e})")
    third = effects.m3
    if sigma_v2_hat is not None:
        third = third + sigma_v2_hat * effects.m1 / effects.m2
    factor = 2.0 * effects.delta_hat * effects.m1 * third / effects.m2
    return factor * (k.g @ _solve(_inner(effects, cm), cm.x_mean, "bias inner matrix"))


def sigma_eps2(design: DyadicDesign, y: OutcomeMatrix) -> float:
    """Mean squared OLS residual on the disjoint pairs ``(2k, 2k+1)``.

    An intercept is appended when the design has none.
    """
    n = design.n
    k = np.arange(n // 2)
    xs = design.x[:, 2 * k, 2 * k + 1].T             # (P, L)
    if design.intercept is None:
        xs = np.column_stack([np.ones(k.size), xs])
    if k.size < xs.shape[1] + 2:
        raise ContractViolation(f"n={n} too small for {xs.shape[1]} regressors on the pair subsample")
    ys = y.y[2 * k, 2 * k + 1]
    coef = _solve(xs.T @ xs, xs.T @ ys, "pair-subsample Gram matrix")
    resid = ys - xs @ coef
    return float(np.mean(resid**2))


def sigma_eps2_full(design: DyadicDesign, y: OutcomeMatrix) -> float:
    """Mean squared OLS residual over all ordered dyads ``i != j``.

    Dependent summands make this less convenient for theory than the pair
    subsample, but it uses all ``N (N - 1)`` residuals and is far less noisy.
    """
    x = design.x
    if design.intercept is None:
        x = np.concatenate([offdiag_ones(design.n)[None], x])
    flat = x.reshape(x.shape[0], -1)
    coef = _solve(flat @ flat.T, flat @ y.y.ravel(), "dyadic Gram matrix")
    resid = y.y - np.tensordot(coef, x, axes=1)
    n = design.n
    return float(np.sum(resid * resid) / (n * (n - 1)))


SIGMA_EPS_METHODS = {"full": sigma_eps2_full, "pairs": sigma_eps2}


def sigma_v2(sigma_eps2_hat: float, effects: EffectRecovery) -> float:
    """``sigma_eps^2 - m2^2 + m1^4``; may be negative in small samples."""
    value = sigma_eps2_hat - effects.m2**2 + effects.m1**4
    if value < 0:
        log.warning("negative noise variance estimate %.4g", value)
    return value


def asymptotic_covariance(effects: EffectRecovery, k: KEstimate, cm: CrossMoments, sigma_v2_hat: float) -> FloatArray:
    """Covariance of the normal part of ``N (mu_hat - mu0)``.

    ``s2 G B^-1 S B^-1' G'`` with ``B = xx - q x_path`` and
    ``S = 2 xx + 10 q^2 m m' - 4 q x_path``.
    """
    q = effects.q
    b_inv = _solve(_inner(effects, cm), np.eye(cm.xx.shape[0]), "covariance inner matrix")
    middle = 2.0 * cm.xx + 10.0 * q * q * np.outer(cm.x_mean, cm.x_mean) - 4.0 * q * cm.x_path
    s2 = max(sigma_v2_hat, SIGMA_V2_FLOOR)
    left = k.g @ b_inv
    cov = s2 * left @ middle @ left.T
    asym = float(np.max(np.abs(cov - cov.T)))
    if asym > ASYMMETRY_TOL * (1.0 + float(np.max(np.abs(cov)))):
        raise EstimationError(f"covariance asymmetry {asym:.3e} exceeds tolerance")
    return 0.5 * (cov + cov.T)


def normal_quantile(p: float) -> float:
    """Standard normal quantile."""
    if not 0.0 < p < 1.0:
        raise ContractViolation(f"quantile level must be in (0, 1), got {p}")
    return float(norm.ppf(p))


def debias_and_ci(
    estimate: EstimateReport,
    effects: EffectRecovery,
    k: KEstimate,
    cm: CrossMoments,
    sigma_eps2_hat: float,
    level: float = 0.95,
    first_stage_effects: EffectRecovery | None = None,
    noise_in_bias: bool = False,
) -> InferenceReport:
    """Bias-corrected point estimate with normal intervals at ``level``."""
    if not 0.0 < level < 1.0:
        raise ContractViolation(f"level must be in (0, 1), got {level}")
    n = effects.n
    s_v2 = sigma_v2(sigma_eps2_hat, effects)
    bias = bias_estimate(effects, k, cm, s_v2 if noise_in_bias else None)
    cov = asymptotic_covariance(effects, k, cm, s_v2)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None)) / n
    point = estimate.mu_hat - bias / n
    z = normal_quantile(0.5 * (1.0 + level))
    return InferenceReport(
        estimate=estimate.mu_hat,
        debiased=point,
        bias=bias,
        sigma_eps2=sigma_eps2_hat,
        sigma_v2=s_v2,
        sigma_v2_degenerate=s_v2 < SIGMA_V2_FLOOR,
        covariance=cov,
        std_errors=se,
        ci_lower=point - z * se,
        ci_upper=point + z * se,
        level=level,
        n=n,
        effects=effects,
        k=k,
        moments=cm,
        first_stage_effects=first_stage_effects,
    )


def infer(
    design: DyadicDesign,
    y: OutcomeMatrix,
    estimate: EstimateReport,
    level: float = 0.95,
    sigma_eps_method: str = "full",
    noise_in_bias: bool = False,
) -> InferenceReport:
    """Full inference for an eigenvalue-corrected estimate.

    Effects are recovered at the final estimate; those at the first stage are
    kept in the report.  ``K`` is reused from the estimate when it carries
    one, else estimated from the first-stage eigenvector.  ``sigma_eps_method``
    picks the residual variance estimator: ``full`` (all dyads) or ``pairs``
    (disjoint pair subsample).
    """
    if sigma_eps_method not in SIGMA_EPS_METHODS:
        raise ContractViolation(f"sigma_eps_method must be one of {sorted(SIGMA_EPS_METHODS)}")
    spec = estimate.spectral or eig_sym(build_residual_matrix(design, y, estimate.mu_hat).m)
    first = estimate.first_stage_spectral
    if estimate.k_estimate is not None:
        k = estimate.k_estimate
    else:
        k = k_hat(design, (first or spec).nu)
    return debias_and_ci(
        estimate,
        recover_effects(spec),
        k,
        cross_moments(design),
        SIGMA_EPS_METHODS[sigma_eps_method](design, y),
        level,
        first_stage_effects=recover_effects(first) if first is not None else None,
        noise_in_bias=noise_in_bias,
    )
