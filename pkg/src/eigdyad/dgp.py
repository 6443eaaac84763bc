"""Seeded simulation of the dyadic model with interacted individual effects.

For ``i != j``::

    Y_ij = sum_l beta_l X_ij,l + gamma (A_i + A_j) + delta * s * A_i A_j + V_ij

with ``s`` the ``effect_scale``.  The same data satisfy
``Y_ij = sum_l mu0_l X_ij,l + delta U_i U_j + V_ij`` with
``U_i = gamma / sqrt(s) + delta sqrt(s) A_i`` and an intercept shifted by
``-delta gamma**2 / s``; for ``s = 1, delta = +1`` this is ``U = gamma + A``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any

import numpy as np
from numpy.typing import NDArray

from eigdyad.core import DyadicDesign, OutcomeMatrix, offdiag_ones
from eigdyad.errors import ConfigError

FloatArray = NDArray[np.float64]

_DIST_PARAMS = {
    "normal": {"loc": 0.0, "scale": 1.0},
    "uniform": {"low": 0.0, "high": 1.0},
}
REGRESSOR_TERMS = ("intercept", "additive", "multiplicative")
REGRESSOR_FORMS = {
    "intercept_only": ("intercept",),
    "additive": ("intercept", "additive"),
    "multiplicative": ("intercept", "multiplicative"),
}


@dataclass(frozen=True)
class Dist:
    """A named distribution: ``normal(loc, scale)`` or ``uniform(low, high)``.

    A shifted normal such as ``1 + N(0, 1)`` is ``normal`` with ``loc=1``.
    """

    name: str = "normal"
    params: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.name not in _DIST_PARAMS:
            raise ConfigError(f"unknown distribution {self.name!r}; choose from {sorted(_DIST_PARAMS)}")
        allowed = _DIST_PARAMS[self.name]
        extra = set(self.params) - set(allowed)
        if extra:
            raise ConfigError(f"unknown parameters {sorted(extra)} for {self.name} distribution")
        merged = {**allowed, **{k: float(v) for k, v in self.params.items()}}
        if self.name == "normal" and merged["scale"] < 0:
            raise ConfigError("normal scale must be non-negative")
        if self.name == "uniform" and merged["high"] < merged["low"]:
            raise ConfigError("uniform needs low <= high")
        object.__setattr__(self, "params", merged)

    def sample(self, rng: np.random.Generator, size: int) -> FloatArray:
        p = self.params
        if self.name == "normal":
            return rng.normal(p["loc"], p["scale"], size)
        return rng.uniform(p["low"], p["high"], size)

    @property
    def mean(self) -> float:
        p = self.params
        return p["loc"] if self.name == "normal" else 0.5 * (p["low"] + p["high"])

    @property
    def var(self) -> float:
        p = self.params
        return p["scale"] ** 2 if self.name == "normal" else (p["high"] - p["low"]) ** 2 / 12.0

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, **self.params}

    @classmethod
    def from_dict(cls, d: dict[str, Any] | str) -> "Dist":
        if isinstance(d, str):
            return cls(d)
        if not isinstance(d, dict) or "name" not in d:
            raise ConfigError(f"distribution must be an object with a 'name', got {d!r}")
        rest = {k: v for k, v in d.items() if k != "name"}
        return cls(d["name"], rest)


def normal(loc: float = 0.0, scale: float = 1.0) -> Dist:
    return Dist("normal", {"loc": loc, "scale": scale})


def uniform(low: float = 0.0, high: float = 1.0) -> Dist:
    return Dist("uniform", {"low": low, "high": high})


@dataclass(frozen=True)
class DesignSpec:
    """Everything needed to draw one data set.

    ``regressor_form`` is ``intercept_only``, ``additive`` (``X_i + X_j``),
    ``multiplicative`` (``X_i X_j``) or a list of terms drawn from
    ``intercept``/``additive``/``multiplicative``, each non-intercept term
    using its own node draws.  ``w_scale`` adds symmetric ``N(0, w_scale^2)``
    dyad-level noise to the non-intercept regressors.
    """

    n: int = 100
    beta: tuple[float, ...] = (1.0, 1.0)
    gamma: float = 0.0
    delta: int = 1
    regressor_form: str | tuple[str, ...] = "additive"
    a_dist: Dist = field(default_factory=normal)
    v_dist: Dist = field(default_factory=normal)
    x_dist: Dist = field(default_factory=uniform)
    effect_scale: float = 1.0
    w_scale: float = 0.0
    seed: int = 0
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "beta", tuple(float(b) for b in np.atleast_1d(self.beta)))
        if isinstance(self.regressor_form, (list, tuple)):
            object.__setattr__(self, "regressor_form", tuple(self.regressor_form))
        if int(self.n) != self.n or self.n < 4:
            raise ConfigError(f"n must be an integer >= 4, got {self.n}")
        object.__setattr__(self, "n", int(self.n))
        if self.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {self.gamma}")
        if self.delta not in (-1, 1):
            raise ConfigError(f"delta must be -1 or +1, got {self.delta}")
        if not self.effect_scale > 0:
            raise ConfigError(f"effect_scale must be positive, got {self.effect_scale}")
        if self.w_scale < 0:
            raise ConfigError("w_scale must be non-negative")
        terms = self.terms
        if len(self.beta) != len(terms):
            raise ConfigError(f"beta has {len(self.beta)} entries for {len(terms)} regressors {terms}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        for d in (self.a_dist, self.v_dist, self.x_dist):
            if not isinstance(d, Dist):
                raise ConfigError(f"distribution fields must be Dist instances, got {d!r}")

    @property
    def terms(self) -> tuple[str, ...]:
        form = self.regressor_form
        if isinstance(form, str):
            if form not in REGRESSOR_FORMS:
                raise ConfigError(f"unknown regressor_form {form!r}")
            return REGRESSOR_FORMS[form]
        bad = [t for t in form if t not in REGRESSOR_TERMS]
        if bad or not form:
            raise ConfigError(f"bad regressor terms {bad or form!r}")
        if form.count("intercept") > 1:
            raise ConfigError("at most one intercept term")
        return form

    @property
    def mean_u(self) -> float:
        """Population ``E(U_1)`` of the reparameterized effects."""
        s = self.effect_scale
        return self.gamma / np.sqrt(s) + self.delta * np.sqrt(s) * self.a_dist.mean

    @property
    def mean_u2(self) -> float:
        """Population ``E(U_1^2)``."""
        return self.effect_scale * self.a_dist.var + self.mean_u**2

    @property
    def mu0(self) -> FloatArray:
        """Coefficients of the reparameterized model (intercept shifted)."""
        mu = np.array(self.beta, dtype=np.float64)
        if "intercept" in self.terms:
            mu[self.terms.index("intercept")] -= self.delta * self.gamma**2 / self.effect_scale
        return mu

    def with_(self, **changes: Any) -> "DesignSpec":
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["beta"] = list(self.beta)
        if isinstance(self.regressor_form, tuple):
            out["regressor_form"] = list(self.regressor_form)
        for key in ("a_dist", "v_dist", "x_dist"):
            out[key] = getattr(self, key).to_dict()
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DesignSpec":
        if not isinstance(d, dict):
            raise ConfigError(f"design must be a JSON object, got {type(d).__name__}")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown design keys {sorted(unknown)}")
        kw = dict(d)
        for key in ("a_dist", "v_dist", "x_dist"):
            if key in kw:
                kw[key] = Dist.from_dict(kw[key])
        if "beta" in kw:
            kw["beta"] = tuple(kw["beta"])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass(frozen=True)
class SimTruth:
    """Realized latent quantities of one simulated data set.

    ``v`` holds the off-diagonal noise (zero diagonal).  ``v_diag`` is the
    diagonal ``delta (E(U^2) - U_i^2)`` of the noise in the matrix form of
    the model; ``spike_noise`` gives the variant used by the spike expansion.
    """

    a: FloatArray
    u: FloatArray
    v: FloatArray
    v_diag: FloatArray
    mu0: FloatArray
    delta: int
    mean_u: float
    mean_u2: float
    x_nodes: tuple[FloatArray, ...] = ()

    def spike_noise(self) -> FloatArray:
        """Noise ``W`` with ``delta * M(mu0) = uu' + W - E(U)^2 I``.

        Off the diagonal ``W = delta * v``; on it ``W_ii = E(U)^2 - U_i^2``.
        """
        w = self.delta * self.v
        w[np.diag_indices_from(w)] = self.mean_u**2 - self.u**2
        return w


def _symmetric_noise(rng: np.random.Generator, dist: Dist, n: int) -> FloatArray:
    iu = np.triu_indices(n, k=1)
    mat = np.zeros((n, n))
    mat[iu] = dist.sample(rng, iu[0].size)
    return mat + mat.T


def _regressor(term: str, xi: FloatArray | None, n: int) -> FloatArray:
    if term == "intercept":
        return offdiag_ones(n)
    assert xi is not None
    mat = xi[:, None] + xi[None, :] if term == "additive" else np.outer(xi, xi)
    np.fill_diagonal(mat, 0.0)
    return mat


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for stream ``keys`` under master ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))))


def derive_seed(seed: int, *keys: int) -> int:
    """64-bit child seed for stream ``keys`` under master ``seed``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def simulate(spec: DesignSpec) -> tuple[DyadicDesign, OutcomeMatrix, SimTruth]:
    """Draw one data set; identical specs give bit-identical output."""
    n = spec.n
    rng = rng_for(spec.seed)
    a = spec.a_dist.sample(rng, n)
    terms = spec.terms
    mats, x_nodes = [], []
    for term in terms:
        xi = None if term == "intercept" else spec.x_dist.sample(rng, n)
        mat = _regressor(term, xi, n)
        if xi is not None:
            x_nodes.append(xi)
            if spec.w_scale > 0:
                mat = mat + _symmetric_noise(rng, normal(0.0, spec.w_scale), n)
        mats.append(mat)
    v = _symmetric_noise(rng, spec.v_dist, n)

    x = np.stack(mats)
    beta = np.array(spec.beta)
    effects = spec.gamma * (a[:, None] + a[None, :]) + spec.delta * spec.effect_scale * np.outer(a, a)
    np.fill_diagonal(effects, 0.0)
    y = np.tensordot(beta, x, axes=1) + effects + v

    s = spec.effect_scale
    u = spec.gamma / np.sqrt(s) + spec.delta * np.sqrt(s) * a
    intercept = terms.index("intercept") if "intercept" in terms else None
    names = tuple("const" if t == "intercept" else f"x{k}" for k, t in enumerate(terms))
    truth = SimTruth(
        a=a,
        u=u,
        v=v,
        v_diag=spec.delta * (spec.mean_u2 - u**2),
        mu0=spec.mu0,
        delta=spec.delta,
        mean_u=spec.mean_u,
        mean_u2=spec.mean_u2,
        x_nodes=tuple(x_nodes),
    )
    return DyadicDesign(x, intercept, names), OutcomeMatrix(y), truth


def oracle_outcome(design: DyadicDesign, spec: DesignSpec, truth: SimTruth) -> OutcomeMatrix:
    """Effect-free outcome ``X beta + V`` built from the same draws."""
    return OutcomeMatrix(design.combine(spec.beta) + truth.v)


def standard_designs(n: int = 100) -> list[DesignSpec]:
    """The four benchmark designs: {additive, multiplicative} x gamma in {0, 1}.

    Intercept and slope equal to one, ``E(A^2) = E(V^2) = 1`` (standard
    normal effects and noise), ``X_i ~ Unif(0, 1)``.
    """
    out = []
    for k, (form, gamma) in enumerate(
        [("additive", 0.0), ("multiplicative", 0.0), ("additive", 1.0), ("multiplicative", 1.0)], start=1
    ):
        out.append(
            DesignSpec(
                n=n,
                beta=(1.0, 1.0),
                gamma=gamma,
                delta=1,
                regressor_form=form,
                a_dist=normal(0.0, 1.0),
                v_dist=normal(0.0, 1.0),
                x_dist=uniform(0.0, 1.0),
                name=f"design{k}",
            )
        )
    return out
